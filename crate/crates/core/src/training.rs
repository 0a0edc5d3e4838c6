//! Pair sampling with augmentation, the four-term density loss, AdamW with
//! polynomial decay, and the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{derive_flow_for, FrameAnnotation, HeadPoint};
use crate::autograd::{Array, Tape, Var};
use crate::dataset::ClipData;
use crate::density::{gt_bundle, DensityMap, GtBundle, KernelSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Binder, Model, ParamStore, TapeOutputs, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub delta_min: usize,
    pub delta_max: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub max_steps: usize,
    /// Pairs per optimization step (N).
    pub batch_pairs: usize,
    /// Side of the square random crop; smaller images are used whole.
    pub crop_size: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip: bool,
    pub cap_long: usize,
    pub cap_short: usize,
    /// Gaussian kernel sigma of the ground-truth maps, in pixels.
    pub sigma: f64,
    /// Validation interval in steps; 0 validates only after the last step.
    pub eval_every: usize,
    /// Upper bound on validation pairs (evenly subsampled).
    pub eval_max_pairs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta_min: 3,
            delta_max: 8,
            lr0: 1e-5,
            weight_decay: 1e-6,
            poly_power: 0.9,
            max_steps: 1000,
            batch_pairs: 1,
            crop_size: 256,
            scale_min: 0.8,
            scale_max: 1.2,
            flip: true,
            cap_long: 2560,
            cap_short: 1440,
            sigma: 4.0,
            eval_every: 100,
            eval_max_pairs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::with_sigma(self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_min < 1 || self.delta_min > self.delta_max {
            return Err(Error::Config(format!(
                "need 1 <= delta_min <= delta_max, got {}..{}",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.lr0 > 0.0) || self.weight_decay < 0.0 || self.poly_power < 0.0 {
            return Err(Error::Config("lr0 must be positive; weight_decay and poly_power non-negative".into()));
        }
        if self.batch_pairs == 0 || self.crop_size == 0 {
            return Err(Error::Config("batch_pairs and crop_size must be >= 1".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(format!(
                "scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        if self.cap_long == 0 || self.cap_short == 0 {
            return Err(Error::Config("resolution caps must be positive".into()));
        }
        self.kernel().validate()
    }

    /// Also checks `delta_max` against the shortest clip.
    pub fn validate_for(&self, clips: &[ClipData]) -> Result<()> {
        self.validate()?;
        if let Some(shortest) = clips.iter().map(ClipData::len).min() {
            if self.delta_max >= shortest {
                return Err(Error::Config(format!(
                    "delta_max ({}) must be smaller than the shortest clip ({shortest} frames)",
                    self.delta_max
                )));
            }
        }
        Ok(())
    }
}

/// `lr0 * (1 - t / max_steps)^power`.
pub fn poly_lr(lr0: f64, step: usize, max_steps: usize, power: f64) -> f64 {
    if max_steps == 0 {
        return lr0;
    }
    lr0 * (1.0 - step as f64 / max_steps as f64).max(0.0).powf(power)
}

/// Geometric augmentation shared by both frames of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    /// Output size of the resize step.
    pub scaled_width: usize,
    pub scaled_height: usize,
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop_width: usize,
    pub crop_height: usize,
    pub flip: bool,
}

impl Augment {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            scaled_width: width,
            scaled_height: height,
            crop_x: 0,
            crop_y: 0,
            crop_width: width,
            crop_height: height,
            flip: false,
        }
    }

    pub fn apply_image(&self, img: &Image) -> Result<Image> {
        let scaled = img.resized(self.scaled_width, self.scaled_height);
        let cropped = scaled.crop(self.crop_x, self.crop_y, self.crop_width, self.crop_height)?;
        Ok(if self.flip { cropped.flipped_horizontal() } else { cropped })
    }

    /// Maps head points through resize (pixel centers preserved), crop and
    /// flip; heads falling outside the crop are dropped.
    pub fn apply_points(&self, frame: &FrameAnnotation) -> FrameAnnotation {
        let sx = self.scaled_width as f64 / frame.width as f64;
        let sy = self.scaled_height as f64 / frame.height as f64;
        let (cw, ch) = (self.crop_width as f64, self.crop_height as f64);
        let points = frame
            .points
            .iter()
            .filter_map(|p| {
                let x = (p.x + 0.5) * sx - 0.5 - self.crop_x as f64;
                let y = (p.y + 0.5) * sy - 0.5 - self.crop_y as f64;
                if !(-0.5..cw - 0.5).contains(&x) || !(-0.5..ch - 0.5).contains(&y) {
                    return None;
                }
                let x = x.clamp(0.0, cw - 1.0);
                let y = y.clamp(0.0, ch - 1.0);
                Some(HeadPoint {
                    x: if self.flip { cw - 1.0 - x } else { x },
                    y,
                    ..p.clone()
                })
            })
            .collect();
        FrameAnnotation::new(
            frame.frame_index,
            self.crop_width as u32,
            self.crop_height as u32,
            points,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub image_a: Image,
    pub image_b: Image,
    pub gt: GtBundle,
    pub frame_a: usize,
    pub delta: usize,
    pub augment: Augment,
}

/// Draws a frame pair `(j, j + delta)` and applies one random augmentation
/// to both frames and their heads before rasterizing the ground truth.
pub fn sample_pair(clip: &ClipData, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<PairSample> {
    let n = clip.len();
    if n <= config.delta_max {
        return Err(Error::Sampling(format!(
            "clip {} has {n} frames; delta_max {} needs at least {}",
            clip.annotation.clip_id,
            config.delta_max,
            config.delta_max + 1
        )));
    }
    let delta = rng.random_range(config.delta_min..=config.delta_max);
    let j = rng.random_range(0..n - delta);

    let (w, h) = (clip.frames[j].width(), clip.frames[j].height());
    let cap = clip.frames[j].cap_scale(config.cap_long, config.cap_short);
    let s = cap * rng.random_range(config.scale_min..=config.scale_max);
    let sw = ((w as f64 * s).round() as usize).max(1);
    let sh = ((h as f64 * s).round() as usize).max(1);
    let cw = config.crop_size.min(sw);
    let ch = config.crop_size.min(sh);
    let crop_x = rng.random_range(0..=sw - cw);
    let crop_y = rng.random_range(0..=sh - ch);
    let flip = config.flip && rng.random_bool(0.5);
    let augment = Augment {
        scaled_width: sw,
        scaled_height: sh,
        crop_x,
        crop_y,
        crop_width: cw,
        crop_height: ch,
        flip,
    };

    let fa = augment.apply_points(&clip.annotation.frames[j]);
    let fb = augment.apply_points(&clip.annotation.frames[j + delta]);
    let flow = derive_flow_for(clip.annotation.supervision, &fa, &fb)?;
    let gt = gt_bundle(&flow, &fa, &fb, &config.kernel(), 1)?;
    Ok(PairSample {
        image_a: augment.apply_image(&clip.frames[j])?,
        image_b: augment.apply_image(&clip.frames[j + delta])?,
        gt,
        frame_a: j,
        delta,
        augment,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    #[serde(rename = "L_g")]
    pub l_g: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_o")]
    pub l_o: f64,
    #[serde(rename = "L_in")]
    pub l_in: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.l_g + self.l_s + self.l_o + self.l_in
    }
}

fn density_array(map: &DensityMap) -> Array {
    Array::new(&[1, map.height(), map.width()], map.to_f64())
}

fn map_mae<'t>(pred: Var<'t>, gt: &DensityMap, name: &str) -> Result<Var<'t>> {
    let want = [1, gt.height(), gt.width()];
    if pred.shape() != want {
        return Err(Error::Loss(format!(
            "{name}: prediction {:?} vs ground truth {:?}",
            pred.shape(),
            want
        )));
    }
    let target = pred.tape().constant(density_array(gt));
    Ok(pred.sub(target).abs().mean())
}

/// Four mean-absolute-error terms averaged over the batch: global and shared
/// over both frames, outflow over first frames, inflow over second frames.
/// The shared term is dropped for the direct variant.
pub fn loss<'t>(
    outputs: &[TapeOutputs<'t>],
    gts: &[&GtBundle],
    variant: Variant,
) -> Result<(Var<'t>, LossComponents)> {
    if outputs.is_empty() || outputs.len() != gts.len() {
        return Err(Error::Loss(format!(
            "{} outputs for {} ground-truth bundles",
            outputs.len(),
            gts.len()
        )));
    }
    let n = outputs.len() as f64;
    let mut g = Vec::new();
    let mut s = Vec::new();
    let mut o = Vec::new();
    let mut i = Vec::new();
    for (out, gt) in outputs.iter().zip(gts) {
        g.push(map_mae(out.global_a, &gt.global_a, "global_a")?);
        g.push(map_mae(out.global_b, &gt.global_b, "global_b")?);
        if variant != Variant::Direct {
            let (Some(sa), Some(sb)) = (out.shared_a, out.shared_b) else {
                return Err(Error::Loss("shared maps missing".into()));
            };
            s.push(map_mae(sa, &gt.shared_a, "shared_a")?);
            s.push(map_mae(sb, &gt.shared_b, "shared_b")?);
        }
        o.push(map_mae(out.outflow_a, &gt.outflow_a, "outflow_a")?);
        i.push(map_mae(out.inflow_b, &gt.inflow_b, "inflow_b")?);
    }
    let l_g = Var::sum_all(&g).scale(1.0 / (2.0 * n));
    let l_o = Var::sum_all(&o).scale(1.0 / n);
    let l_in = Var::sum_all(&i).scale(1.0 / n);
    let mut terms = vec![l_g, l_o, l_in];
    let l_s = (!s.is_empty()).then(|| Var::sum_all(&s).scale(1.0 / (2.0 * n)));
    terms.extend(l_s);
    let parts = LossComponents {
        l_g: l_g.item(),
        l_s: l_s.map_or(0.0, |v| v.item()),
        l_o: l_o.item(),
        l_in: l_in.item(),
    };
    Ok((Var::sum_all(&terms), parts))
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    moments: BTreeMap<String, (Array, Array)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Array>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Array::zeros(g.shape()), Array::zeros(g.shape())));
            let decay = 1.0 - lr * self.weight_decay;
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv = *pv * decay - lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossComponents,
    pub total: f64,
    pub lr: f64,
}

/// Mean absolute flow errors of a model over a set of frame pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEval {
    pub miae: f64,
    pub moae: f64,
    pub pairs: usize,
}

/// Every pair `(j, j + delta)` for `delta` in the configured range, evenly
/// subsampled to at most `max_pairs`.
pub fn eval_pairs(clips: &[ClipData], delta_min: usize, delta_max: usize, max_pairs: usize) -> Vec<(usize, usize, usize)> {
    let mut all = Vec::new();
    for (c, clip) in clips.iter().enumerate() {
        for delta in delta_min..=delta_max {
            for j in 0..clip.len().saturating_sub(delta) {
                all.push((c, j, j + delta));
            }
        }
    }
    if max_pairs == 0 || all.len() <= max_pairs {
        return all;
    }
    (0..max_pairs).map(|k| all[k * all.len() / max_pairs]).collect()
}

/// Compares predicted inflow/outflow masses with true head counts.
pub fn evaluate_flows(model: &Model, clips: &[ClipData], pairs: &[(usize, usize, usize)]) -> Result<FlowEval> {
    if pairs.is_empty() {
        return Err(Error::Metric("no evaluation pairs".into()));
    }
    let (mut ei, mut eo) = (0.0, 0.0);
    for &(c, a, b) in pairs {
        let clip = &clips[c];
        let flow = derive_flow_for(
            clip.annotation.supervision,
            &clip.annotation.frames[a],
            &clip.annotation.frames[b],
        )?;
        let out = model.forward(&clip.frames[a], &clip.frames[b])?;
        ei += (out.inflow_mass() - flow.inflow.len() as f64).abs();
        eo += (out.outflow_mass() - flow.outflow.len() as f64).abs();
    }
    let n = pairs.len() as f64;
    Ok(FlowEval {
        miae: ei / n,
        moae: eo / n,
        pairs: pairs.len(),
    })
}

/// Loss and parameter gradients for one batch of samples.
pub fn loss_and_gradients(
    model: &Model,
    batch: &[PairSample],
) -> Result<(LossComponents, f64, BTreeMap<String, Array>)> {
    let tape = Tape::new();
    let binder = Binder::bind(&tape, model.params(), true);
    let outputs = batch
        .iter()
        .map(|s| model.forward_tape(&binder, &s.image_a.to_chw(), &s.image_b.to_chw()))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<&GtBundle> = batch.iter().map(|s| &s.gt).collect();
    let (total, parts) = loss(&outputs, &gts, model.config().dcfa.variant)?;
    let value = total.item();
    let grads = tape.backward(total);
    Ok((parts, value, binder.gradients(&grads)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub best_step: Option<usize>,
    pub best_val_miae: Option<f64>,
    pub final_val: Option<FlowEval>,
}

/// Runs `config.max_steps` AdamW steps. With `out_dir`, writes `log.jsonl`,
/// the effective `train.json`, the checkpoint with the best validation MIAE
/// in `out_dir` and the final weights in `out_dir/last`. Without validation
/// clips the training clips are used for validation.
pub fn train(
    model: &mut Model,
    train_clips: &[ClipData],
    val_clips: &[ClipData],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_clips.is_empty() {
        return Err(Error::Input("no training clips".into()));
    }
    config.validate_for(train_clips)?;
    let val = if val_clips.is_empty() { train_clips } else { val_clips };
    let pairs = eval_pairs(val, config.delta_min, config.delta_max, config.eval_max_pairs);

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg = dir.join("train.json");
            std::fs::write(&cfg, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&cfg, e))?;
            let path = dir.join("log.jsonl");
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config.weight_decay);
    let mut outcome = TrainOutcome {
        log: Vec::with_capacity(config.max_steps),
        best_step: None,
        best_val_miae: None,
        final_val: None,
    };

    let validate = |model: &Model, step: usize, outcome: &mut TrainOutcome| -> Result<FlowEval> {
        let eval = evaluate_flows(model, val, &pairs)?;
        log::info!("step {step}: validation MIAE {:.4} MOAE {:.4}", eval.miae, eval.moae);
        if outcome.best_val_miae.is_none_or(|b| eval.miae < b) {
            outcome.best_val_miae = Some(eval.miae);
            outcome.best_step = Some(step);
            if let Some(dir) = out_dir {
                model.save(dir)?;
            }
        }
        Ok(eval)
    };

    for step in 0..config.max_steps {
        let lr = poly_lr(config.lr0, step, config.max_steps, config.poly_power);
        let batch = (0..config.batch_pairs)
            .map(|_| {
                let c = rng.random_range(0..train_clips.len());
                sample_pair(&train_clips[c], config, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (parts, total, grads) = loss_and_gradients(model, &batch)?;
        if !total.is_finite() {
            return Err(Error::Diverged { step, value: total });
        }
        let entry = StepLog {
            step,
            loss: parts,
            total,
            lr,
        };
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&*path, e))?;
        }
        log::debug!("step {step}: loss {total:.6e} lr {lr:.3e}");
        outcome.log.push(entry);
        opt.step(model.params_mut(), &grads, lr);

        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < config.max_steps {
            validate(model, step + 1, &mut outcome)?;
        }
    }
    let final_eval = validate(model, config.max_steps, &mut outcome)?;
    outcome.final_val = Some(final_eval);
    if let Some(dir) = out_dir {
        model.save(dir.join("last"))?;
    }
    Ok(outcome)
}
