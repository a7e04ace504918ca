//! Finite-difference gradient verification.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datamodel::FrameFeatureSequence;
use crate::error::Result;
use crate::pooling::{attention_pool_backward, attention_pool_forward, AttentionPoolParams, PoolingMode};
use crate::training::{total_loss, LossConfig, ParamTensor, PoolingHead, TripletMargin};

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn central_difference(point: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − n_i| / max(‖a‖∞, ‖n‖∞, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric)).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Deliberate analytic-gradient defects, for checking that the suite bites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mutation {
    FlipGradW,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckOptions {
    pub configs: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub mutation: Option<Mutation>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            configs: 100,
            h: 1e-5,
            tolerance: 1e-5,
            seed: 0,
            mutation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub suite: &'static str,
    pub tensor: String,
    pub configs: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<TensorCheck>,
    /// Largest |grad_w| seen on single-frame tracklets.
    pub single_frame_grad_w: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<8} {:<18} configs={:<4} max_rel_error={:.3e} {}\n",
                c.suite,
                c.tensor,
                c.configs,
                c.max_rel_error,
                if c.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!("single-frame |grad_w| = {}\n", self.single_frame_grad_w));
        out.push_str(if self.passed {
            "gradcheck passed\n"
        } else {
            "gradcheck FAILED\n"
        });
        out
    }
}

fn record(checks: &mut Vec<TensorCheck>, suite: &'static str, tensor: &str, err: f64) {
    match checks.iter_mut().find(|c| c.suite == suite && c.tensor == tensor) {
        Some(c) => {
            c.configs += 1;
            c.max_rel_error = c.max_rel_error.max(err);
        }
        None => checks.push(TensorCheck {
            suite,
            tensor: tensor.to_string(),
            configs: 1,
            max_rel_error: err,
        }),
    }
}

fn random_frames(rng: &mut ChaCha8Rng, t: usize, c: usize, index: usize) -> FrameFeatureSequence {
    FrameFeatureSequence::new(Array2::from_shape_fn((t, c), |_| rng.random_range(-1.0..1.0)), index)
        .expect("finite random frames")
}

/// Attention pooling against `g·z` for a random upstream gradient `g`.
fn pooling_suite(opts: &GradcheckOptions, rng: &mut ChaCha8Rng, checks: &mut Vec<TensorCheck>) -> Result<f64> {
    const TS: [usize; 4] = [1, 2, 8, 16];
    const CS: [usize; 2] = [4, 64];
    let mut single_frame = 0.0f64;
    for i in 0..opts.configs {
        let (t, c) = (TS[i % TS.len()], CS[(i / TS.len()) % CS.len()]);
        let seq = random_frames(rng, t, c, i);
        let params = AttentionPoolParams {
            w: Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0)),
            trainable: true,
        };
        let g = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let (_, cache) = attention_pool_forward(&seq, &params)?;
        let mut grads = attention_pool_backward(&seq, &params, &cache, g.view())?;
        if opts.mutation == Some(Mutation::FlipGradW) {
            grads.grad_w.mapv_inplace(|v| -v);
        }
        let objective = |seq: &FrameFeatureSequence, p: &AttentionPoolParams| {
            attention_pool_forward(seq, p)
                .map(|(e, _)| e.z.dot(&g))
                .expect("valid forward")
        };
        let fw = central_difference(params.w.as_slice().unwrap(), opts.h, |w| {
            let p = AttentionPoolParams {
                w: Array1::from(w.to_vec()),
                trainable: true,
            };
            objective(&seq, &p)
        });
        record(
            checks,
            "pooling",
            "attention.w",
            max_relative_error(grads.grad_w.as_slice().unwrap(), &fw),
        );
        let ff = central_difference(seq.frames.as_slice().unwrap(), opts.h, |f| {
            let s = FrameFeatureSequence {
                frames: Array2::from_shape_vec((t, c), f.to_vec()).unwrap(),
                tracklet_index: i,
            };
            objective(&s, &params)
        });
        record(
            checks,
            "pooling",
            "frames",
            max_relative_error(grads.grad_frames.as_slice().unwrap(), &ff),
        );
        if t == 1 {
            single_frame = grads.grad_w.iter().fold(single_frame, |m, v| m.max(v.abs()));
        }
    }
    Ok(single_frame)
}

/// Weighted total loss over a random P×K batch, every head tensor.
fn model_suite(opts: &GradcheckOptions, rng: &mut ChaCha8Rng, checks: &mut Vec<TensorCheck>) -> Result<f64> {
    const TS: [usize; 3] = [1, 2, 8];
    const CS: [usize; 3] = [4, 8, 16];
    let mut single_frame = 0.0f64;
    for i in 0..opts.configs {
        let (t, c) = (TS[i % TS.len()], CS[(i / TS.len()) % CS.len()]);
        let instance_norm = i % 2 == 0;
        let mode = if i % 10 == 9 {
            PoolingMode::Mean
        } else {
            PoolingMode::Attn
        };
        let (p, k) = (2 + i % 3, 2);
        let labels: Vec<usize> = (0..p * k).map(|j| j / k).collect();
        let batch: Vec<FrameFeatureSequence> = (0..p * k).map(|j| random_frames(rng, t, c, j)).collect();
        let refs: Vec<&FrameFeatureSequence> = batch.iter().collect();

        let mut head = PoolingHead::init(mode, c, (0..p as u32).collect(), instance_norm, 0.07, rng)?;
        for tensor in head.tensors() {
            let scale = match tensor {
                ParamTensor::LogTemperature => 0.2,
                _ => 0.5,
            };
            for v in head.tensor_mut(tensor).unwrap() {
                *v += rng.random_range(-scale..scale);
            }
        }
        let config = LossConfig {
            label_smoothing: 0.1,
            triplet: TripletMargin::Soft,
            ..LossConfig::default()
        };

        let (_, grads) = total_loss(&refs, &labels, &head, &config)?;
        for tensor in head.tensors() {
            let mut analytic = grads.tensor(tensor).expect("grads mirror the head").to_vec();
            if tensor == ParamTensor::AttentionW && opts.mutation == Some(Mutation::FlipGradW) {
                analytic.iter_mut().for_each(|v| *v = -*v);
            }
            let numeric = central_difference(head.tensor(tensor).unwrap(), opts.h, |x| {
                let mut probe = head.clone();
                probe.tensor_mut(tensor).unwrap().copy_from_slice(x);
                total_loss(&refs, &labels, &probe, &config)
                    .expect("valid batch")
                    .0
                    .total
            });
            record(checks, "model", tensor.name(), max_relative_error(&analytic, &numeric));
            if tensor == ParamTensor::AttentionW && t == 1 {
                single_frame = analytic.iter().fold(single_frame, |m, v| m.max(v.abs()));
            }
        }
    }
    Ok(single_frame)
}

/// Finite-difference checks of attention pooling and of the full training
/// objective at 64-bit.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let a = pooling_suite(opts, &mut rng, &mut checks)?;
    let b = model_suite(opts, &mut rng, &mut checks)?;
    let passed = checks.iter().all(|c| c.max_rel_error < opts.tolerance);
    Ok(GradcheckReport {
        checks,
        single_frame_grad_w: a.max(b),
        tolerance: opts.tolerance,
        passed,
    })
}
