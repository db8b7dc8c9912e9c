//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use artgan::autodiff::{grad_check, NodeId, Tape, LEAKY_RELU_SLOPE};
use artgan::dataset::{filter_rgb, load_images, scan_directory, BatchSampler};
use artgan::metrics::{
    extract_features, fid, kid, sqrtm_spd, Extractor, FeatureSet, GaussianStats, KidConfig,
};
use artgan::model::{demodulate_weights, sample_latent, Discriminator, Generator, ModelConfig};
use artgan::survey::{aggregate, attribution_rate, parse_responses_from, Attribution, Group};
use artgan::tensor::Tensor;
use artgan::trainer::{
    decode_checkpoint, encode_checkpoint, train, TrainConfig, TrainHooks, TrainState,
};
use artgan::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

// ---------------------------------------------------------------- 1

const POINTS: usize = 10;
const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
/// Points whose leaky_relu inputs come closer than this to 0 are redrawn.
const MIN_KINK: f64 = 1e-3;

type LossFn = Box<dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>>;

/// Reduces a node to a scalar through a fixed random weighting, so every
/// output coordinate gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: NodeId, seed: u64) -> Result<NodeId> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(normal(&shape, &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

struct OpCase {
    name: &'static str,
    inputs: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>,
    loss: LossFn,
}

fn op_case(
    name: &'static str,
    shapes: &'static [&'static [usize]],
    op: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs: Box::new(move |rng| shapes.iter().map(|s| normal(s, rng)).collect()),
        loss: Box::new(move |tape, ids| {
            let y = op(tape, ids)?;
            weighted_sum(tape, y, 99)
        }),
    }
}

fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        op_case("add", &[&[3, 4], &[3, 4]], |t, x| t.add(x[0], x[1])),
        op_case("add (scalar broadcast)", &[&[3, 4], &[]], |t, x| t.add(x[0], x[1])),
        op_case("sub", &[&[3, 4], &[3, 4]], |t, x| t.sub(x[0], x[1])),
        op_case("mul", &[&[3, 4], &[3, 4]], |t, x| t.mul(x[0], x[1])),
        op_case("mul (scalar broadcast)", &[&[3, 4], &[]], |t, x| t.mul(x[0], x[1])),
        op_case("scale", &[&[3, 4]], |t, x| t.scale(x[0], -1.7)),
        op_case("leaky_relu", &[&[4, 5]], |t, x| t.leaky_relu(x[0], LEAKY_RELU_SLOPE)),
        op_case("softplus", &[&[4, 5]], |t, x| t.softplus(x[0])),
        op_case("square", &[&[4, 5]], |t, x| t.square(x[0])),
        op_case("sum", &[&[4, 5]], |t, x| t.sum(x[0])),
        op_case("mean", &[&[4, 5]], |t, x| t.mean(x[0])),
        op_case("matmul", &[&[3, 4], &[4, 5]], |t, x| t.matmul(x[0], x[1])),
        op_case("conv2d stride 1 pad 1", &[&[2, 3, 5, 5], &[4, 3, 3, 3]], |t, x| {
            t.conv2d(x[0], x[1], 1, 1)
        }),
        op_case("conv2d stride 2 pad 0", &[&[1, 2, 7, 7], &[3, 2, 3, 3]], |t, x| {
            t.conv2d(x[0], x[1], 2, 0)
        }),
        op_case("conv2d 1x1", &[&[1, 3, 4, 4], &[2, 3, 1, 1]], |t, x| t.conv2d(x[0], x[1], 1, 0)),
        op_case("reshape", &[&[3, 4]], |t, x| t.reshape(x[0], &[2, 6])),
        op_case("demodulate", &[&[4, 3, 3, 3], &[3]], |t, x| t.demodulate(x[0], x[1], 1e-8)),
        op_case("channel_bias", &[&[2, 4, 3, 3], &[4]], |t, x| t.channel_bias(x[0], x[1])),
        op_case("upsample2x", &[&[1, 2, 3, 3]], |t, x| t.upsample2x(x[0])),
        op_case("downsample2x", &[&[1, 2, 4, 4]], |t, x| t.downsample2x(x[0])),
        op_case("elementwise(\"scale(0.5)\")", &[&[3, 3]], |t, x| t.elementwise("scale(0.5)", x)),
    ];
    cases.push(OpCase {
        name: "rsqrt",
        inputs: Box::new(|rng| vec![normal(&[4, 5], rng).map(|v| v.abs() + 0.5)]),
        loss: Box::new(|t, x| {
            let y = t.rsqrt(x[0])?;
            weighted_sum(t, y, 98)
        }),
    });
    cases
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        resolution: 8,
        dim_z: 4,
        dim_w: 4,
        mapping_layers: 2,
        channel_base: 16,
        channel_max: 3,
        ..Default::default()
    }
}

fn noisy_generator(cfg: &ModelConfig, seed: u64) -> Generator<f64> {
    let mut g = Generator::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    for b in 0..cfg.synthesis_blocks() {
        *g.params.get_mut(&format!("b{b}.noise_strength")).unwrap() = Tensor::scalar(0.3);
    }
    g
}

/// Generator loss `softplus(-D(G(z)))` in the generator parameters; the
/// points are fresh generator initializations.
fn generator_case() -> OpCase {
    let cfg = tiny_model();
    let template = noisy_generator(&cfg, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let d = Discriminator::<f64>::init(&cfg, &mut rng).unwrap();
    let z = sample_latent::<f64>(cfg.dim_z, &mut rng);
    OpCase {
        name: "generator loss end to end",
        inputs: Box::new(move |rng| noisy_generator(&tiny_model(), rng.random()).params.tensors().to_vec()),
        loss: Box::new(move |tape, ids| {
            let gb = template.params.bind(ids)?;
            let db = d.params.register(tape, false);
            let zn = tape.constant(z.clone());
            let img = template.graph(tape, &gb, zn, 5)?;
            let logit = d.graph(tape, &db, img)?;
            let neg = tape.scale(logit, -1.0)?;
            tape.softplus(neg)
        }),
    }
}

/// Discriminator loss `softplus(D(fake)) + softplus(-D(real))` in the
/// discriminator parameters.
fn discriminator_case() -> OpCase {
    let cfg = tiny_model();
    let template = Discriminator::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let real = normal(&[3, 8, 8], &mut rng).map(f64::tanh);
    let fake = normal(&[3, 8, 8], &mut rng).map(f64::tanh);
    OpCase {
        name: "discriminator loss end to end",
        inputs: Box::new(move |rng| {
            Discriminator::<f64>::init(&tiny_model(), rng).unwrap().params.tensors().to_vec()
        }),
        loss: Box::new(move |tape, ids| {
            let db = template.params.bind(ids)?;
            let xr = tape.constant(real.clone());
            let xf = tape.constant(fake.clone());
            let lr = template.graph(tape, &db, xr)?;
            let lf = template.graph(tape, &db, xf)?;
            let nr = tape.scale(lr, -1.0)?;
            let a = tape.softplus(lf)?;
            let b = tape.softplus(nr)?;
            tape.add(a, b)
        }),
    }
}

/// Worst error over `POINTS` smooth points, and how many points were redrawn.
fn check_points(case: &OpCase) -> std::result::Result<(f64, usize), String> {
    let (mut worst, mut accepted, mut redrawn, mut seed) = (0.0f64, 0, 0, 0u64);
    while accepted < POINTS {
        seed += 1;
        if seed > 20 * POINTS as u64 {
            return Err(format!("only {accepted} smooth points in {} draws", seed - 1));
        }
        let inputs = (case.inputs)(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = grad_check(&case.loss, &inputs, FD_STEP).map_err(|e| e.to_string())?;
        if r.min_kink_distance.is_some_and(|k| k < MIN_KINK) {
            redrawn += 1;
            continue;
        }
        worst = worst.max(r.max_relative_error);
        accepted += 1;
    }
    Ok((worst, redrawn))
}

fn gradient_suite() -> Outcome {
    let mut cases = op_cases();
    cases.push(generator_case());
    cases.push(discriminator_case());
    let mut lines = Vec::new();
    let mut failed = false;
    for case in &cases {
        match check_points(case) {
            Ok((worst, redrawn)) => {
                failed |= worst >= GRAD_TOL;
                lines.push(format!("{} {worst:.1e} ({redrawn} redrawn)", case.name));
            }
            Err(e) => {
                failed = true;
                lines.push(format!("{}: {e}", case.name));
            }
        }
    }
    check(!failed, format!("max rel err at {POINTS} points: {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 2

fn stats(mu: Vec<f64>, sigma: Tensor<f64>) -> GaussianStats<f64> {
    let d = mu.len();
    GaussianStats {
        mu: Tensor::new(vec![d], mu).unwrap(),
        sigma,
    }
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let b = normal(&[d, d], rng);
    let bbt = b.matmul(&b.transpose().unwrap()).unwrap();
    let ridge = Tensor::<f64>::eye(d).map(|v| v * 0.1);
    bbt.map(|v| v / d as f64).zip_map(&ridge, |a, r| a + r).unwrap()
}

/// Product of `d` random Householder reflections.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut q = Tensor::<f64>::eye(d);
    for _ in 0..d {
        let v = normal(&[d, 1], rng);
        let vv: f64 = v.data().iter().map(|x| x * x).sum();
        let outer = v.matmul(&v.transpose().unwrap()).unwrap();
        let h = Tensor::<f64>::eye(d).zip_map(&outer, |i, o| i - 2.0 * o / vv).unwrap();
        q = h.matmul(&q).unwrap();
    }
    q
}

fn rotate(s: &GaussianStats<f64>, q: &Tensor<f64>) -> GaussianStats<f64> {
    let d = s.dim();
    let mu = q.matmul(&s.mu.reshape(&[d, 1]).unwrap()).unwrap();
    let sigma = q.matmul(&s.sigma).unwrap().matmul(&q.transpose().unwrap()).unwrap();
    stats(mu.into_data(), sigma)
}

fn fid_oracle() -> Outcome {
    let a = stats(vec![0.0], Tensor::full(&[1, 1], 1.0));
    let b = stats(vec![1.0], Tensor::full(&[1, 1], 4.0));
    let uni = fid(&a, &b).map_err(|e| e.to_string())?;
    // (mu_a - mu_b)^2 + s_a^2 + s_b^2 - 2 s_a s_b
    let closed = (0.0f64 - 1.0).powi(2) + 1.0 + 4.0 - 2.0 * (1.0f64 * 4.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 32;
    let (mut self_worst, mut sym_worst, mut rot_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let p = stats(normal(&[d], &mut rng).into_data(), random_spd(d, &mut rng));
        let q = stats(normal(&[d], &mut rng).into_data(), random_spd(d, &mut rng));
        let pq = fid(&p, &q).map_err(|e| e.to_string())?;
        let qp = fid(&q, &p).map_err(|e| e.to_string())?;
        let o = random_orthogonal(d, &mut rng);
        let rotated = fid(&rotate(&p, &o), &rotate(&q, &o)).map_err(|e| e.to_string())?;
        self_worst = self_worst.max(fid(&p, &p).map_err(|e| e.to_string())?.abs());
        sym_worst = sym_worst.max((pq - qp).abs() / pq.abs().max(1.0));
        rot_worst = rot_worst.max((pq - rotated).abs() / pq.abs().max(1.0));
    }
    check(
        (uni - 2.0).abs() <= 1e-10 && (uni - closed).abs() <= 1e-10 && self_worst < 1e-10 && sym_worst <= 1e-9 && rot_worst <= 1e-9,
        format!(
            "univariate {uni:.15} (closed form {closed}); fid(A,A) max {self_worst:.1e}; symmetry {sym_worst:.1e}; rotation {rot_worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn matrix_sqrt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let mut count = 0;
    for d in [2, 8, 64, 256] {
        for _ in 0..100 {
            let a = random_spd(d, &mut rng);
            let s = sqrtm_spd(&a).map_err(|e| e.to_string())?;
            let ss = s.matmul(&s).unwrap();
            let diff = ss.zip_map(&a, |x, y| x - y).unwrap();
            worst = worst.max(diff.frobenius_norm() / a.frobenius_norm());
            count += 1;
        }
    }
    let diag = Tensor::new(vec![2, 2], vec![4.0, 0.0, 0.0, 9.0]).unwrap();
    let root = sqrtm_spd(&diag).map_err(|e| e.to_string())?;
    let expect = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap();
    let diag_err = root.max_abs_diff(&expect);
    check(
        worst < 1e-8 && diag_err <= 1e-12,
        format!("{count} random SPD matrices, worst ||SS-A||/||A|| = {worst:.2e}; diag(4,9) error {diag_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 4

fn features(rows: Vec<Vec<f64>>) -> FeatureSet<f64> {
    let (n, d) = (rows.len(), rows[0].len());
    FeatureSet::new(Tensor::new(vec![n, d], rows.concat()).unwrap(), "test").unwrap()
}

fn random_features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> FeatureSet<f64> {
    features((0..n).map(|_| normal(&[d], rng).into_data()).collect())
}

/// Unbiased MMD² with the cubic kernel `(x·y/d + 1)^3`, by direct double loops.
fn mmd2_double_loop(x: &FeatureSet<f64>, y: &FeatureSet<f64>) -> f64 {
    let d = x.dim() as f64;
    let k = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (x.n(), y.n());
    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += k(x.row(i), x.row(j));
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += k(y.row(i), y.row(j));
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..n {
            kxy += k(x.row(i), y.row(j));
        }
    }
    kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64 - 2.0 * kxy / (m * n) as f64
}

fn kid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = random_features(200, 8, &mut rng);
    let y = random_features(200, 8, &mut rng).matrix.map(|v| v * 1.1 + 0.2);
    let y = FeatureSet::new(y, "test").unwrap();
    let one_block = KidConfig {
        block_size: Some(200),
        num_blocks: 1,
        ..Default::default()
    };
    let est = kid(&x, &y, &one_block, 0).map_err(|e| e.to_string())?.mean;
    let oracle = mmd2_double_loop(&x, &y);

    let hand_cfg = KidConfig {
        block_size: Some(2),
        num_blocks: 1,
        ..Default::default()
    };
    let hand = kid(&features(vec![vec![1.0], vec![1.0]]), &features(vec![vec![0.0], vec![0.0]]), &hand_cfg, 0)
        .map_err(|e| e.to_string())?
        .mean;

    let reps: Vec<f64> = (0..50u64)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
            let a = random_features(100, 8, &mut rng);
            let b = random_features(100, 8, &mut rng);
            kid(&a, &b, &KidConfig::default(), r).unwrap().mean
        })
        .collect();
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let sd = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    check(
        (est - oracle).abs() <= 1e-10 && hand == 7.0 && mean.abs() <= 3.0 * se,
        format!(
            "block vs double loop |diff| {:.1e}; hand case {hand}; same-distribution mean {mean:.2e} vs 3 SE {:.2e}",
            (est - oracle).abs(),
            3.0 * se
        ),
    )
}

// ---------------------------------------------------------------- 5

fn demodulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let (mut norm_err, mut inv_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let k = normal(&[6, 4, 3, 3], &mut rng);
        let s = normal(&[4], &mut rng).map(|v| v.abs() + 0.1);
        let w = demodulate_weights(&k, &s, 0.0).map_err(|e| e.to_string())?;
        for slice in w.data().chunks(4 * 9) {
            let n: f64 = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
            norm_err = norm_err.max((n - 1.0).abs());
        }
        for c in [0.1, 3.0, 1000.0] {
            let wc = demodulate_weights(&k, &s.map(|v| v * c), 0.0).map_err(|e| e.to_string())?;
            for (a, b) in w.data().iter().zip(wc.data()) {
                inv_err = inv_err.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    check(
        norm_err <= 1e-12 && inv_err <= 1e-12,
        format!("per-output norm error {norm_err:.1e}; scale invariance rel error {inv_err:.1e} over c in {{0.1, 3, 1000}}"),
    )
}

// ---------------------------------------------------------------- 6

fn small_train_config() -> TrainConfig {
    TrainConfig {
        resolution: 16,
        dim_z: 8,
        dim_w: 8,
        mapping_layers: 2,
        channel_base: 64,
        channel_max: 8,
        batch_size: 4,
        total_iterations: 10,
        r1_interval: 4,
        seed: 61,
        augment_flip: true,
        ..Default::default()
    }
}

fn checkpoint_resume() -> Outcome {
    let cfg = small_train_config();
    let images = common::shapes_corpus(12, 16, 62);
    let sampler = BatchSampler::new(images, cfg.batch_size, cfg.data_seed(), cfg.augment_flip).unwrap();
    let none = TrainHooks::default();
    let run = |state: &mut TrainState<f64>, until| train(state, &sampler, &cfg, until, &none).map_err(|e| e.to_string());

    let mut straight = TrainState::<f64>::new(&cfg).map_err(|e| e.to_string())?;
    run(&mut straight, 10)?;

    let mut first = TrainState::<f64>::new(&cfg).map_err(|e| e.to_string())?;
    run(&mut first, 5)?;
    let bytes = encode_checkpoint(&first, &cfg).map_err(|e| e.to_string())?;
    let (mut resumed, cfg_back) = decode_checkpoint::<f64>(&bytes).map_err(|e| e.to_string())?;
    let roundtrip_state = resumed == first && cfg_back == cfg;
    let roundtrip_bytes = encode_checkpoint(&resumed, &cfg_back).map_err(|e| e.to_string())? == bytes;
    run(&mut resumed, 10)?;

    let bitwise = |a: &TrainState<f64>, b: &TrainState<f64>| {
        let params = |s: &TrainState<f64>| {
            s.generator
                .params
                .tensors()
                .iter()
                .chain(s.discriminator.params.tensors())
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        params(a) == params(b) && a == b
    };
    let identical = bitwise(&straight, &resumed);

    let mut undetected = Vec::new();
    for pos in 0..bytes.len() {
        for flip in [0x01u8, 0x80] {
            let mut corrupt = bytes.clone();
            corrupt[pos] ^= flip;
            if decode_checkpoint::<f64>(&corrupt).is_ok() {
                undetected.push(pos);
            }
        }
    }
    check(
        identical && roundtrip_state && roundtrip_bytes && undetected.is_empty(),
        format!(
            "train(10) vs train(5)+save+resume+train(5) bitwise equal: {identical}; roundtrip state {roundtrip_state}, bytes {roundtrip_bytes}; {} single-byte corruptions of {} bytes undetected",
            undetected.len(),
            bytes.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn desk_training() -> Outcome {
    let cfg = TrainConfig {
        resolution: 32,
        batch_size: 16,
        channel_base: 256,
        channel_max: 16,
        total_iterations: 2000,
        fid_monitor_interval: 250,
        fid_monitor_samples: 200,
        extractor: "pool".into(),
        seed: 7,
        augment_flip: false,
        ..Default::default()
    };
    let images = common::shapes_corpus(200, 32, 1);
    let real = extract_features(&images, Extractor::Pool).map_err(|e| e.to_string())?;
    let sampler = BatchSampler::new(images, cfg.batch_size, cfg.data_seed(), cfg.augment_flip).unwrap();
    let mut state = TrainState::<f64>::new(&cfg).map_err(|e| e.to_string())?;
    let hooks = TrainHooks {
        checkpoint_dir: None,
        real_features: Some(&real),
    };
    train(&mut state, &sampler, &cfg, cfg.total_iterations, &hooks).map_err(|e| e.to_string())?;

    let fids = state.fid_values();
    let (first, last) = (fids[0], *fids.last().unwrap());
    let finite = state.loss_history.len() == 2000
        && state.loss_history.iter().all(|l| l.loss_d.is_finite() && l.loss_g.is_finite());
    let samples = artgan::cli::generate(&state.generator, cfg.monitor_seed(), cfg.fid_monitor_samples)
        .map_err(|e| e.to_string())?;
    let gen = extract_features(&samples, Extractor::Pool).map_err(|e| e.to_string())?;
    let min_std = (0..gen.dim())
        .map(|j| {
            let col: Vec<f64> = (0..gen.n()).map(|i| gen.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    let trajectory: Vec<String> = state
        .fid_history
        .iter()
        .map(|p| format!("{}:{:.1}", p.iteration, p.fid))
        .collect();
    check(
        last <= 0.5 * first && finite && min_std > 0.0,
        format!(
            "FID {first:.2} -> {last:.2} (ratio {:.3}); trajectory [{}]; losses finite {finite}; min per-dim std {min_std:.3e}",
            last / first,
            trajectory.join(" "),
        ),
    )
}

// ---------------------------------------------------------------- 8

fn dataset_pipeline(dir: &Path) -> Outcome {
    let rgb = |seed: u8| image::RgbImage::from_fn(20, 14, move |x, y| image::Rgb([x as u8 * 12, y as u8 * 18, seed]));
    rgb(0).save(dir.join("a_rgb.png")).unwrap();
    rgb(100).save(dir.join("b_rgb.jpg")).unwrap();
    rgb(255).save(dir.join("c_rgb.png")).unwrap();
    image::GrayImage::from_fn(9, 9, |x, _| image::Luma([x as u8 * 25])).save(dir.join("d_gray.png")).unwrap();
    image::GrayImage::from_pixel(9, 9, image::Luma([77])).save(dir.join("e_gray.jpg")).unwrap();
    image::RgbaImage::from_pixel(9, 9, image::Rgba([1, 2, 3, 128])).save(dir.join("f_rgba.png")).unwrap();

    let manifest = filter_rgb(scan_directory(dir).map_err(|e| e.to_string())?)
        .with_resolution(16)
        .map_err(|e| e.to_string())?;
    let c = manifest.counts;
    let images = load_images::<f64>(&manifest).map_err(|e| e.to_string())?;
    let sampler = BatchSampler::new(images, 3, 8, true).unwrap();
    let in_range = (0..4).all(|k| sampler.batch(k).data().iter().all(|v| (-1.0..=1.0).contains(v)));

    let corpus = BatchSampler::new(common::shapes_corpus(12, 8, 3), 4, 9, false).unwrap();
    let coverage = (0..3).all(|epoch| {
        let mut seen: Vec<usize> = (0..3)
            .flat_map(|b| corpus.batch_indices(epoch * 3 + b))
            .map(|(i, _)| i)
            .collect();
        seen.sort_unstable();
        seen == (0..12).collect::<Vec<_>>()
    });
    check(
        c.kept == 3 && c.dropped_non_rgb == 3 && c.scanned == 6 && c.is_conserved() && in_range && coverage,
        format!(
            "scanned {} kept {} dropped_non_rgb {} dropped_unreadable {}; batch values in [-1,1]: {in_range}; exact epoch coverage: {coverage}",
            c.scanned, c.kept, c.dropped_non_rgb, c.dropped_unreadable
        ),
    )
}

// ---------------------------------------------------------------- 9

fn survey_aggregation() -> Outcome {
    let synth = common::SyntheticSurvey::random(26, 12, 91);
    let responses = parse_responses_from(synth.to_csv(5).as_bytes()).map_err(|e| e.to_string())?;
    let report = aggregate(&responses).map_err(|e| e.to_string())?;

    let mut worst = 0.0f64;
    for (c, row) in report.criteria.iter().enumerate() {
        for (real, got) in [(true, row.real), (false, row.generated)] {
            let per_image: Vec<f64> = (0..synth.images)
                .filter(|&i| synth.is_real(i) == real)
                .map(|i| (0..synth.respondents).map(|r| synth.scores[r][i][c] as f64).sum::<f64>() / synth.respondents as f64)
                .collect();
            let n = per_image.len() as f64;
            let mean = per_image.iter().sum::<f64>() / n;
            let std = (per_image.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst = worst.max((got.mean - mean).abs()).max((got.std - std).abs());
        }
    }

    let constant = common::SyntheticSurvey::constant(26, 12, 3);
    let flat = aggregate(&parse_responses_from(constant.to_csv(1).as_bytes()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let all_three = flat
        .criteria
        .iter()
        .all(|r| r.real.mean == 3.0 && r.generated.mean == 3.0 && r.real.std == 0.0 && r.generated.std == 0.0)
        && flat.to_csv().lines().take(5).skip(1).all(|l| l.ends_with(",3.00 ± 0.00,3.00 ± 0.00"));

    let mut sums_to_one = true;
    for g in [Group::Real, Group::Generated] {
        let artist = attribution_rate(&responses, g).map_err(|e| e.to_string())?;
        let rows: Vec<_> = responses.iter().filter(|r| r.group == g).collect();
        let computer = rows.iter().filter(|r| r.attribution == Attribution::Computer).count() as f64 / rows.len() as f64;
        sums_to_one &= artist + computer == 1.0;
    }
    let csv = report.to_csv();
    let table: Vec<&str> = csv.split("\n\n").next().unwrap().lines().skip(1).collect();
    let labels: Vec<&str> = table.iter().map(|l| l.split(',').next().unwrap()).collect();
    let counts_ok = report.counts.real_judgments == 156 && report.counts.generated_judgments == 156;
    check(
        worst <= 1e-12 && all_three && sums_to_one && labels == ["Interesting", "Inspiring", "Innovative", "Overall"] && counts_ok,
        format!(
            "26x12 oracle max error {worst:.1e}; constant-3 file all 3.00 ± 0.00: {all_three}; attribution sums to 1: {sums_to_one}; CSV rows {labels:?}; 156 judgments per group: {counts_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn pipeline_determinism(root: &Path) -> Outcome {
    let data = root.join("data");
    common::write_corpus(&data, &common::shapes_corpus(24, 16, 101));
    let config = root.join("run.cfg");
    fs::write(
        &config,
        format!(
            "data_dir = {}\nresolution = 16\nchannel_base = 64\nchannel_max = 8\ndim_z = 8\ndim_w = 8\nbatch_size = 4\ntotal_iterations = 6\nfid_monitor_interval = 3\nfid_monitor_samples = 16\ncheckpoint_interval = 5\nr1_interval = 2\neval_samples = 24\ngrid_images = 12\nkid_block = 12\nseed = 5\n",
            data.display()
        ),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let args = ["artgan", "pipeline", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let code = artgan::cli::run(args);
        if code != 0 {
            return Err(format!("pipeline run {run} exited with {code}"));
        }
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for rel in ["report.json", "grid.png"] {
            files.push((rel.to_string(), fs::read(out.join(rel)).map_err(|e| e.to_string())?));
        }
        let mut samples: Vec<_> = fs::read_dir(out.join("samples")).unwrap().map(|e| e.unwrap().path()).collect();
        samples.sort();
        for p in samples {
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    check(
        same && outputs[0].len() == 14,
        format!("{} files (report.json, grid.png, 12 samples) byte-identical across two runs: {same}", outputs[0].len()),
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let data_dir = tmp.path().join("dataset");
    fs::create_dir_all(&data_dir).unwrap();
    let pipeline_dir = tmp.path().join("pipeline");

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 gradient suite", Box::new(gradient_suite)),
        ("2 FID oracle", Box::new(fid_oracle)),
        ("3 matrix square root", Box::new(matrix_sqrt)),
        ("4 KID oracle", Box::new(kid_oracle)),
        ("5 demodulation", Box::new(demodulation)),
        ("6 checkpoint/resume", Box::new(checkpoint_resume)),
        ("7 desk-scale training trend", Box::new(desk_training)),
        ("8 dataset pipeline", Box::new(move || dataset_pipeline(&data_dir))),
        ("9 survey aggregation", Box::new(survey_aggregation)),
        ("10 end-to-end determinism", Box::new(move || pipeline_determinism(&pipeline_dir))),
    ];
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failures = 0;
    for (name, run) in &criteria {
        if only.as_deref().is_some_and(|o| !name.starts_with(&format!("{o} "))) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
