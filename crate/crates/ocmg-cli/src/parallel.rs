//! Worker-pool helpers. Results always fold in input order, so any worker
//! count reproduces the single-threaded output bit for bit.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ocmg_core::geom::MetricConfig;
use ocmg_core::learner::{
    accumulate_chunk, fold_chunks, EpochOutput, EpochRunner, ModelConfig, ModelParams,
    TrainError, TrainSample, GRAD_CHUNK,
};
use ocmg_core::losses::CurriculumWeights;

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to every item on a pool of `workers` threads; the output
/// vector preserves item order.
pub fn run_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("worker filled every slot")).collect()
}

/// Epoch runner that farms the fixed-size gradient chunks out to threads
/// and folds the chunk sums in order, matching the serial runner exactly.
pub struct ParallelRunner {
    pub workers: usize,
}

impl EpochRunner for ParallelRunner {
    fn run(
        &mut self,
        cfg: &ModelConfig,
        params: &ModelParams,
        samples: &[TrainSample],
        weights: &CurriculumWeights,
        mask_active: bool,
        metric: &MetricConfig,
    ) -> Result<EpochOutput, TrainError> {
        let chunks: Vec<&[TrainSample]> = samples.chunks(GRAD_CHUNK).collect();
        let results = run_ordered(&chunks, self.workers, |_, chunk| {
            accumulate_chunk(cfg, params, chunk, weights, mask_active, metric)
        });
        let mut outputs = Vec::with_capacity(results.len());
        for r in results {
            outputs.push(r?);
        }
        Ok(fold_chunks(cfg, samples.len(), outputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_results_match_input_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = run_ordered(&items, 4, |i, &x| {
            std::thread::sleep(std::time::Duration::from_micros((37 - i as u64) * 10));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
