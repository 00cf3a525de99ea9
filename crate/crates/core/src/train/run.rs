//! The training loop: epochs of shuffled batches, L1 loss, Adam updates,
//! a machine-readable loss trace, and periodic checkpoints. Everything is
//! a pure function of (seed, config, data).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, augment, lr_at, make_patches, random_patch, AdamState, PatchPair, TrainError};
use crate::config::RunSettings;
use crate::lf::LightField;
use crate::net::{bind_leaves, epit_forward_on_tape, save_checkpoint, xavier_init, EpitWeights};
use crate::tensor::{Tape, Tensor, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub weights: EpitWeights<Tensor<f32>>,
    pub trace: Vec<TraceRow>,
}

/// Writes the `epoch,step,lr,loss` trace with a provenance comment line.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow], config_hash: &str) -> Result<(), TrainError> {
    let mut text = format!("# config={config_hash}\nepoch,step,lr,loss\n");
    for row in trace {
        text.push_str(&format!("{},{},{:e},{:.9e}\n", row.epoch, row.step, row.lr, row.loss));
    }
    fs::write(path, text).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })
}

/// Trains from scratch on the given scenes. When `out_dir` is set, writes
/// `trace.csv`, the final `model.eptw`, and `model_epoch{N}.eptw` every
/// `checkpoint_every` epochs.
pub fn train_loop(
    scenes: &[LightField],
    settings: &RunSettings,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    settings
        .validate()
        .map_err(|e| TrainError::Net(crate::net::NetError::Config(e.to_string())))?;
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = &settings.train;
    let net_cfg = &settings.net;

    let grid_patches: Vec<PatchPair> = if cfg.random_crops {
        Vec::new()
    } else {
        let mut all = Vec::new();
        for scene in scenes {
            all.extend(make_patches(scene, cfg)?);
        }
        if all.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        all
    };
    let patches_per_epoch = if cfg.random_crops {
        scenes.len().max(cfg.batch_size)
    } else {
        grid_patches.len()
    };

    let mut weights = xavier_init(net_cfg, cfg.seed)?;
    let mut sizes = Vec::new();
    weights.visit(&mut |_, t| sizes.push(t.numel()));
    let mut adam = AdamState::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut trace = Vec::new();
    let mut step: u64 = 0;
    let config_hash = crate::config_hash(&settings.to_text());

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let epoch_patches: Vec<PatchPair> = if cfg.random_crops {
            (0..patches_per_epoch)
                .map(|i| random_patch(&scenes[i % scenes.len()], cfg, &mut rng))
                .collect::<Result<_, _>>()?
        } else {
            let mut order: Vec<usize> = (0..grid_patches.len()).collect();
            order.shuffle(&mut rng);
            order.iter().map(|&i| grid_patches[i].clone()).collect()
        };

        for batch in epoch_patches.chunks(cfg.batch_size) {
            let mut tape: Tape<f32> = Tape::new();
            tape.set_finite_checks(false); // the divergence guard below reports instead
            let bound = bind_leaves(&mut tape, &weights);
            let mut leaf_ids: Vec<ValueId> = Vec::with_capacity(sizes.len());
            bound.visit(&mut |_, &id| leaf_ids.push(id));

            let mut losses: Vec<ValueId> = Vec::with_capacity(batch.len());
            for pair in batch {
                let pair = augment(pair, cfg, &mut rng)?;
                let (u, v, h, w) = pair.lr.extents();
                let input = tape.constant(
                    Tensor::from_f32_slice(vec![u, v, h, w, pair.lr.channels()], pair.lr.data())
                        .unwrap(),
                );
                let (hu, hv, hh, hw) = pair.hr.extents();
                let target = tape.constant(
                    Tensor::from_f32_slice(vec![hu, hv, hh, hw, pair.hr.channels()], pair.hr.data())
                        .unwrap(),
                );
                let result = epit_forward_on_tape(&mut tape, input, &bound, net_cfg, None)?;
                losses.push(tape.l1_loss(result.output, target)?);
            }
            let mut total = losses[0];
            for &loss in &losses[1..] {
                total = tape.add(total, loss)?;
            }
            let mean_loss = tape.scale(total, 1.0 / losses.len() as f64)?;
            let loss_value = tape.value(mean_loss).item() as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::Divergence { epoch, step, loss: loss_value });
            }

            let grads = tape.backward(mean_loss)?;
            adam.t += 1;
            let mut param_index = 0;
            weights.visit_mut(&mut |_, tensor| {
                let id = leaf_ids[param_index];
                let grad = grads.dense(id, tensor.numel());
                adam_step(
                    tensor.data_mut(),
                    &grad,
                    &mut adam.m[param_index],
                    &mut adam.v[param_index],
                    adam.t,
                    lr,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.adam_eps,
                );
                param_index += 1;
            });

            step += 1;
            trace.push(TraceRow { epoch, step, lr, loss: loss_value });
        }

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("model_epoch{}.eptw", epoch + 1));
                save_checkpoint(&path, net_cfg, &weights)?;
            }
        }
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.to_path_buf(), source: e })?;
        save_checkpoint(&dir.join("model.eptw"), net_cfg, &weights)?;
        write_trace_csv(&dir.join("trace.csv"), &trace, &config_hash)?;
    }

    Ok(TrainOutcome { weights, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lf::{synth_lf, Plane};
    use crate::net::EpitConfig;

    fn tiny_settings() -> RunSettings {
        let net = EpitConfig { alpha: 2, ..EpitConfig::micro() };
        let mut train = crate::train::TrainConfig::default_for_alpha(2);
        train.hr_patch = 16;
        train.epochs = 2;
        train.batch_size = 2;
        train.seed = 9;
        RunSettings { net, train }
    }

    fn tiny_scene() -> LightField {
        let tex = Plane::from_fn(64, 64, |y, x| (((y * 13 + x * 7 + y * x) % 53) as f32) / 53.0);
        synth_lf(&tex, 1.0, (2, 2, 32, 32)).unwrap()
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let settings = tiny_settings();
        let scenes = vec![tiny_scene()];
        let a = train_loop(&scenes, &settings, None).unwrap();
        let b = train_loop(&scenes, &settings, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let settings = tiny_settings();
        assert!(matches!(train_loop(&[], &settings, None), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn loss_decreases_on_short_run() {
        let mut settings = tiny_settings();
        settings.train.epochs = 15;
        settings.train.augment_hflip = false;
        settings.train.augment_vflip = false;
        settings.train.augment_rot90 = false;
        let scenes = vec![tiny_scene()];
        let outcome = train_loop(&scenes, &settings, None).unwrap();
        let first = outcome.trace.first().unwrap().loss;
        let last = outcome.trace.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn trace_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![TraceRow { epoch: 0, step: 1, lr: 2e-4, loss: 0.125 }];
        write_trace_csv(&dir.path().join("trace.csv"), &rows, "abc123").unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# config=abc123");
        assert_eq!(lines.next().unwrap(), "epoch,step,lr,loss");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,1,2e-4,") || row.starts_with("0,1,"), "{row}");
    }
}
