//! Seeded synthetic datasets.

use serde::{Deserialize, Serialize};

use super::fixed::Fixed;
use super::net::{forward_outputs, init_weights, Batch, Dataset};
use super::prng::PrngStream;
use crate::model::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Independent uniform targets; only memorization lowers the loss.
    Random,
    /// Targets produced by a seeded teacher network of the same shape.
    Teacher,
}

/// Uniform on the grid in `[-0.5, 0.5)`, from the top 16 bits of a draw.
fn half_unit(stream: &mut PrngStream) -> i32 {
    (stream.next_u64() >> 48) as i32 - 32768
}

/// `n_batches` batches of `batch_size` items. Inputs are triangular on
/// `[-1, 1)` (sum of two half-width uniforms), the shape the token
/// frequency check expects of natural data.
pub fn synthetic_dataset(seed: &Seed, architecture: &[u32], n_batches: u32, batch_size: u32, task: TaskKind) -> Dataset {
    Dataset { batches: task_batches(seed, architecture, 0..n_batches, batch_size, task) }
}

/// Batches `indices` of the dataset named by `seed`. Any two index ranges
/// share the teacher but not the inputs.
pub fn task_batches(
    seed: &Seed,
    architecture: &[u32],
    indices: std::ops::Range<u32>,
    batch_size: u32,
    task: TaskKind,
) -> Vec<Batch> {
    let seed = seed.derive("dataset");
    let wi = architecture[0];
    let wt = *architecture.last().expect("architecture");
    let teacher = match task {
        TaskKind::Teacher => Some(init_weights(architecture, &seed.derive("teacher")).expect("valid architecture")),
        TaskKind::Random => None,
    };
    indices
        .map(|b| {
            let mut stream = PrngStream::new(&seed, &format!("data/{b}"));
            let inputs: Vec<Fixed> =
                (0..batch_size * wi).map(|_| Fixed(half_unit(&mut stream) + half_unit(&mut stream))).collect();
            let targets = match &teacher {
                Some(t) => inputs.chunks(wi as usize).flat_map(|x| forward_outputs(t, x)).collect(),
                None => (0..batch_size * wt).map(|_| Fixed(2 * half_unit(&mut stream))).collect(),
            };
            Batch { batch_index: b, input_width: wi, target_width: wt, inputs, targets }
        })
        .collect()
}

/// Same generator, batch indices offset by `first_index`. Used for the
/// Verifier's holdout sets so that indices never collide with training data.
pub fn synthetic_batches_from(
    seed: &Seed,
    architecture: &[u32],
    first_index: u32,
    n_batches: u32,
    batch_size: u32,
    task: TaskKind,
) -> Vec<Batch> {
    let mut ds = synthetic_dataset(seed, architecture, n_batches, batch_size, task);
    for b in &mut ds.batches {
        b.batch_index += first_index;
    }
    ds.batches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let a = synthetic_dataset(&Seed::from_u64(1), &[4, 8, 2], 3, 8, TaskKind::Random);
        assert_eq!(a, synthetic_dataset(&Seed::from_u64(1), &[4, 8, 2], 3, 8, TaskKind::Random));
        assert_eq!(a.batches.len(), 3);
        assert_eq!(a.batches[1].items(), 8);
        assert_eq!(a.batches[1].targets.len(), 16);
        assert!(a.batches.iter().flat_map(|b| &b.inputs).all(|x| (-65536..65536).contains(&x.raw())));
    }

    #[test]
    fn teacher_targets_follow_teacher() {
        let a = synthetic_dataset(&Seed::from_u64(2), &[3, 2], 1, 4, TaskKind::Teacher);
        let b = synthetic_dataset(&Seed::from_u64(2), &[3, 2], 1, 4, TaskKind::Random);
        assert_eq!(a.batches[0].inputs, b.batches[0].inputs);
        assert_ne!(a.batches[0].targets, b.batches[0].targets);
    }
}
