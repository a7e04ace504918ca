use ndarray::{Array1, Array2, Axis};
use xfdreid::datamodel::{Dataset, Split};
use xfdreid::pooling::PoolingMode;
use xfdreid::synthfix::{generate, FixtureConfig};
use xfdreid::training::{
    class_ids, initial_head, lr_at, total_loss, train, LossConfig, LossWeights, PkSampler, Preset, Stage, TrainConfig,
    TripletMargin,
};

fn fixture() -> Dataset {
    generate(&FixtureConfig {
        num_ids: 8,
        tracklets_per_id: 8,
        seq_len: 6,
        feature_dim: 12,
        ..FixtureConfig::default()
    })
    .unwrap()
    .dataset
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::preset(Preset::Ours, Stage::Stage1);
    cfg.batch = 16;
    cfg.max_epochs = 12;
    cfg.base_lr = 1e-3;
    cfg
}

#[test]
fn loss_goes_down() {
    let ds = fixture();
    let out = train(&ds, &small_config(), None).unwrap();
    let first = out.history.first().unwrap().loss.total;
    let last = out.history.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    assert!(out.history.iter().all(|e| e.loss.total.is_finite()));
}

#[test]
fn training_is_deterministic() {
    let ds = fixture();
    let a = train(&ds, &small_config(), None).unwrap();
    let b = train(&ds, &small_config(), None).unwrap();
    assert_eq!(a.head, b.head);
    assert_eq!(a.history, b.history);
    let mut other = small_config();
    other.seed = 9;
    assert_ne!(train(&ds, &other, None).unwrap().head, a.head);
}

#[test]
fn frozen_groups_stay_put() {
    let ds = fixture();
    let mut cfg = small_config();
    cfg.frozen = vec!["classifier".into(), "identity_memory".into()];
    let init = initial_head(&ds, &cfg).unwrap();
    let out = train(&ds, &cfg, None).unwrap();
    assert_eq!(out.head.classifier_weight, init.classifier_weight);
    assert_eq!(out.head.identity_memory, init.identity_memory);
    assert_ne!(out.head.attention.w, init.attention.w);

    let mut mean = small_config();
    mean.pooling = PoolingMode::Mean;
    let out = train(&ds, &mean, None).unwrap();
    assert!(out.head.attention.w.iter().all(|&w| w == 0.0));
}

#[test]
fn stage_two_continues_from_stage_one() {
    let ds = fixture();
    let s1 = train(&ds, &small_config(), None).unwrap();
    let mut cfg = TrainConfig::preset(Preset::Ours, Stage::Stage2);
    cfg.batch = 16;
    cfg.max_epochs = 3;
    let s2 = train(&ds, &cfg, Some(s1.head.clone())).unwrap();
    assert_eq!(s2.history.len(), 3);
    assert_ne!(s2.head, s1.head);
}

#[test]
fn gradients_are_linear_in_the_weights() {
    let ds = fixture();
    let head = initial_head(&ds, &small_config()).unwrap();
    let train_records: Vec<_> = ds
        .split(Split::Train)
        .filter(|r| r.person_id < 4 && r.camera_id < 4)
        .collect();
    let ids = class_ids(&ds);
    let batch: Vec<_> = train_records.iter().map(|r| ds.sequence(r.tracklet_index)).collect();
    let labels: Vec<usize> = train_records
        .iter()
        .map(|r| ids.binary_search(&r.person_id).unwrap())
        .collect();
    let with = |w: LossWeights| {
        let cfg = LossConfig {
            weights: w,
            ..LossConfig::default()
        };
        total_loss(&batch, &labels, &head, &cfg).unwrap()
    };
    let unit = |i: usize| {
        let mut v = [0.0; 4];
        v[i] = 1.0;
        LossWeights {
            lambda_id: v[0],
            lambda_tri: v[1],
            lambda_i2t: v[2],
            lambda_t2i: v[3],
        }
    };
    let parts: Vec<_> = (0..4).map(|i| with(unit(i))).collect();
    let (full, grads) = with(LossWeights {
        lambda_id: 0.25,
        lambda_tri: 1.0,
        lambda_i2t: 1.0,
        lambda_t2i: 1.0,
    });
    let coeff = [0.25, 1.0, 1.0, 1.0];
    let expected_total: f64 = parts.iter().zip(coeff).map(|(p, c)| c * p.0.total).sum();
    assert!((full.total - expected_total).abs() < 1e-12);
    let combined: Vec<f64> = grads.iter_all().collect();
    let mut superposed = vec![0.0; combined.len()];
    for (p, c) in parts.iter().zip(coeff) {
        for (s, g) in superposed.iter_mut().zip(p.1.iter_all()) {
            *s += c * g;
        }
    }
    for (a, b) in combined.iter().zip(&superposed) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Label-smoothed softmax regression on mean-pooled frames with Adam,
/// written independently of the library's loss and optimizer code.
struct SoftmaxRegression {
    w: Array2<f64>,
    b: Array1<f64>,
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
    t: i32,
}

impl SoftmaxRegression {
    fn loss_and_grads(&self, x: &Array2<f64>, y: &[usize], eps: f64) -> (f64, Array2<f64>, Array1<f64>) {
        let k = self.b.len();
        let n = x.nrows() as f64;
        let logits = x.dot(&self.w.t()) + &self.b;
        let mut loss = 0.0;
        let mut dlogits = Array2::zeros(logits.dim());
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for c in 0..k {
                let p = (row[c] - m).exp() / z;
                let q = eps / k as f64 + if c == y[i] { 1.0 - eps } else { 0.0 };
                loss -= q * ((row[c] - m) - z.ln());
                dlogits[[i, c]] = (p - q) / n;
            }
        }
        (loss / n, dlogits.t().dot(x), dlogits.sum_axis(Axis(0)))
    }

    fn adam(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64, wd: f64) {
        for i in 0..p.len() {
            let gi = g[i] + wd * p[i];
            m[i] = 0.9 * m[i] + 0.1 * gi;
            v[i] = 0.999 * v[i] + 0.001 * gi * gi;
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }

    fn step(&mut self, gw: &Array2<f64>, gb: &Array1<f64>, lr: f64, wd: f64, wd_bias: f64) {
        self.t += 1;
        Self::adam(
            self.w.as_slice_mut().unwrap(),
            gw.as_slice().unwrap(),
            self.mw.as_slice_mut().unwrap(),
            self.vw.as_slice_mut().unwrap(),
            self.t,
            lr,
            wd,
        );
        Self::adam(
            self.b.as_slice_mut().unwrap(),
            gb.as_slice().unwrap(),
            self.mb.as_slice_mut().unwrap(),
            self.vb.as_slice_mut().unwrap(),
            self.t,
            lr,
            wd_bias,
        );
    }
}

#[test]
fn reduces_to_softmax_regression() {
    let ds = fixture();
    let mut cfg = small_config();
    cfg.pooling = PoolingMode::Mean;
    cfg.instance_norm = false;
    cfg.lambda_tri = 0.0;
    cfg.lambda_i2t = 0.0;
    cfg.lambda_t2i = 0.0;
    cfg.triplet = TripletMargin::Soft;
    let out = train(&ds, &cfg, None).unwrap();

    let init = initial_head(&ds, &cfg).unwrap();
    let k = init.num_ids();
    let c = ds.feature_dim;
    let mut reg = SoftmaxRegression {
        w: init.classifier_weight.clone(),
        b: init.classifier_bias.clone(),
        mw: Array2::zeros((k, c)),
        vw: Array2::zeros((k, c)),
        mb: Array1::zeros(k),
        vb: Array1::zeros(k),
        t: 0,
    };
    let records: Vec<_> = ds.split(Split::Train).collect();
    let ids = class_ids(&ds);
    let labels: Vec<usize> = records
        .iter()
        .map(|r| ids.binary_search(&r.person_id).unwrap())
        .collect();
    let pooled: Vec<Array1<f64>> = records
        .iter()
        .map(|r| ds.sequence(r.tracklet_index).frames.mean_axis(Axis(0)).unwrap())
        .collect();
    let mut sampler = PkSampler::new(&labels, cfg.ids_per_batch(), cfg.instances_per_id, cfg.seed + 1).unwrap();
    let schedule = cfg.schedule_config();
    let mut last_epoch_loss = 0.0;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, &schedule).unwrap();
        let batches = sampler.next_epoch();
        let mut total = 0.0;
        for batch in &batches {
            let mut x = Array2::zeros((batch.len(), c));
            for (row, &i) in batch.iter().enumerate() {
                x.row_mut(row).assign(&pooled[i]);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) = reg.loss_and_grads(&x, &y, cfg.label_smoothing);
            // The objective is λ_id · CE.
            let lambda = cfg.lambda_id;
            reg.step(
                &(gw * lambda),
                &(gb * lambda),
                lr,
                cfg.weight_decay,
                cfg.weight_decay_bias,
            );
            total += loss;
        }
        last_epoch_loss = total / batches.len() as f64;
    }
    let ours = out.history.last().unwrap().loss;
    assert!(
        (ours.id - last_epoch_loss).abs() < 1e-6,
        "{} vs {last_epoch_loss}",
        ours.id
    );
    assert!((ours.total - 0.25 * last_epoch_loss).abs() < 1e-6);
    let dw = (&out.head.classifier_weight - &reg.w)
        .mapv(f64::abs)
        .fold(0.0f64, |a, &b| a.max(b));
    assert!(dw < 1e-9, "classifier differs by {dw}");
}
