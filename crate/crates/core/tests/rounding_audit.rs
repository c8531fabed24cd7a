//! Source audit: the integer training path may only leave the wide
//! accumulator through the three floor-rounding helpers.

const NET: &str = include_str!("../src/detnet/net.rs");
const OPTIM: &str = include_str!("../src/detnet/optim.rs");
const ENGINE: &str = include_str!("../src/detnet/engine.rs");
const FIXED: &str = include_str!("../src/detnet/fixed.rs");

/// Production code only: stops at the float shadow model or the test module.
fn production(src: &str) -> String {
    let end = ["pub mod shadow", "#[cfg(test)]"].iter().filter_map(|m| src.find(m)).min().unwrap_or(src.len());
    src[..end].lines().filter(|l| !l.trim_start().starts_with("//")).collect::<Vec<_>>().join("\n")
}

const FORBIDDEN: [&str; 8] = [">> FRAC_BITS", ">> 16", "/ 65536", ".round()", "to_f64", "as f64", "as f32", "from_f64"];

#[test]
fn integer_path_has_no_ad_hoc_rounding() {
    for (name, src) in [("net", NET), ("optim", OPTIM)] {
        let code = production(src);
        for pat in FORBIDDEN {
            assert!(!code.contains(pat), "{name}: found `{pat}`");
        }
    }
    // The engine only uses floats to decide fault injection.
    let engine = production(ENGINE);
    assert_eq!(engine.matches("as f64").count(), 1);
    for pat in [">> FRAC_BITS", ">> 16", "/ 65536", ".round()", "to_f64", "from_f64"] {
        assert!(!engine.contains(pat), "engine: found `{pat}`");
    }
}

#[test]
fn rounding_helpers_are_the_only_narrowing_sites() {
    let net = production(NET);
    let optim = production(OPTIM);
    assert!(net.matches("floor_shift(").count() >= 3);
    assert!(optim.contains("div_floor(") && optim.contains("sqrt_floor("));
    let fixed = production(FIXED);
    assert_eq!(fixed.matches(">> FRAC_BITS").count(), 1, "floor_shift is the one shift-down");
    assert_eq!(fixed.matches("div_euclid").count(), 1, "div_floor is the one division");
}
