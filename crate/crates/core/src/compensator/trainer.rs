//! Concurrent online trainer.
//!
//! The simulation loop hands a signal snapshot and the current weights to a
//! worker thread at trigger points; the worker duplicates the network,
//! trains it, and sends the updated weights back. The simulation applies
//! received weights atomically at macro-step boundaries only, so a slow
//! training cycle never corrupts a step in progress.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use super::{build_training_set, train, CompensatorNet, TrainOutcome, TrainerConfig};

pub struct TrainJob {
    pub channel_index: usize,
    pub cycle: u64,
    /// Recorded sent samples of the coupling signal, oldest first.
    pub snapshot: Vec<f64>,
    pub net: CompensatorNet,
    pub config: TrainerConfig,
    pub delay_steps: usize,
    pub seed: u64,
}

pub struct TrainResult {
    pub channel_index: usize,
    pub cycle: u64,
    pub outcome: TrainOutcome,
    pub sample_count: usize,
}

/// Single worker thread processing jobs in submission order, which keeps
/// result ordering deterministic across channels.
pub struct TrainerWorker {
    jobs: Option<Sender<TrainJob>>,
    results: Receiver<TrainResult>,
    handle: Option<JoinHandle<()>>,
}

impl TrainerWorker {
    pub fn spawn() -> Self {
        let (job_tx, job_rx) = channel::<TrainJob>();
        let (result_tx, result_rx) = channel::<TrainResult>();
        let handle = std::thread::spawn(move || {
            for job in job_rx.iter() {
                let samples = build_training_set(
                    &job.snapshot,
                    job.net.inputs,
                    job.delay_steps,
                    job.config.max_samples,
                );
                let outcome = if samples.is_empty() {
                    // too-short signal: skip the cycle, keep old weights
                    TrainOutcome {
                        net: job.net.clone(),
                        cost_before: f64::NAN,
                        cost_after: f64::NAN,
                        accepted: false,
                    }
                } else {
                    train(&job.net, &samples, &job.config, job.seed)
                };
                let result = TrainResult {
                    channel_index: job.channel_index,
                    cycle: job.cycle,
                    outcome,
                    sample_count: samples.len(),
                };
                if result_tx.send(result).is_err() {
                    break;
                }
            }
        });
        Self {
            jobs: Some(job_tx),
            results: result_rx,
            handle: Some(handle),
        }
    }

    pub fn submit(&self, job: TrainJob) {
        if let Some(tx) = &self.jobs {
            // worker outlives all submissions unless it panicked
            let _ = tx.send(job);
        }
    }

    /// Non-blocking poll for a finished cycle.
    pub fn try_result(&self) -> Option<TrainResult> {
        self.results.try_recv().ok()
    }

    /// Blocks until the next cycle finishes; used by the deterministic
    /// application schedule.
    pub fn wait_result(&self) -> Option<TrainResult> {
        self.results.recv().ok()
    }
}

impl Drop for TrainerWorker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compensator::{init_from_linear, ExtrapolatorParams};

    #[test]
    fn worker_round_trip() {
        let worker = TrainerWorker::spawn();
        let params = ExtrapolatorParams::zoh(4);
        let net = init_from_linear(&params, 0.01);
        let signal: Vec<f64> = (0..200).map(|i| (i as f64 * 0.01).sin()).collect();
        let cfg = TrainerConfig {
            epochs: 5,
            trigger_every: 50,
            max_samples: 100,
            ..TrainerConfig::default()
        };
        worker.submit(TrainJob {
            channel_index: 2,
            cycle: 1,
            snapshot: signal,
            net,
            config: cfg,
            delay_steps: 3,
            seed: 9,
        });
        let result = worker.wait_result().expect("worker result");
        assert_eq!(result.channel_index, 2);
        assert_eq!(result.cycle, 1);
        assert!(result.sample_count > 0);
    }

    #[test]
    fn empty_snapshot_skips_cycle() {
        let worker = TrainerWorker::spawn();
        let params = ExtrapolatorParams::zoh(4);
        let net = init_from_linear(&params, 0.01);
        worker.submit(TrainJob {
            channel_index: 0,
            cycle: 1,
            snapshot: vec![1.0, 2.0],
            net: net.clone(),
            config: TrainerConfig::default(),
            delay_steps: 3,
            seed: 0,
        });
        let result = worker.wait_result().unwrap();
        assert!(!result.outcome.accepted);
        assert_eq!(result.sample_count, 0);
        assert_eq!(result.outcome.net, net);
    }
}
