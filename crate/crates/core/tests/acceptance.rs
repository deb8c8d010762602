//! One test per acceptance criterion; the test names carry the criterion
//! number. Criteria that need the real datasets are ignored by default.
//! Point `FAIRTAB_LAW_CSV` and `FAIRTAB_STUDENT_CSV` at the files and run
//! `cargo test --release --test acceptance -- --ignored`.

use std::path::PathBuf;
use std::sync::OnceLock;

use fairtab::data::{encode_and_split, load_csv, parse_csv, synthetic, SchemaConfig, SplitSpec};
use fairtab::engine::gradcheck;
use fairtab::engine::{EngineError, Graph, Tensor, Var};
use fairtab::fairness::{
    abroca, disparate_mistreatment, eod, parity_penalty, roc_curve, spd, FairnessError, GroupedPredictions, RocCurve,
};
use fairtab::models::{Batch, Classifier, FeatureLayout, ForwardCtx, ModelError, ModelKind, ModelSpec};
use fairtab::trainer::reproduce::{reproduce, AggregateRow, DatasetId, ReproduceOptions, ReproduceResult};
use fairtab::trainer::{run, train, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
const GRAD_TOL: f64 = 1e-4;

// ---- shared runs on the real datasets -------------------------------------

fn dataset_path(var: &str) -> PathBuf {
    match std::env::var_os(var) {
        Some(p) => PathBuf::from(p),
        None => panic!("set {var} to the dataset CSV to run this criterion"),
    }
}

fn harness(id: DatasetId, var: &str, constrained: bool) -> ReproduceResult {
    let raw = load_csv(&dataset_path(var), &id.schema()).expect("dataset loads");
    let mut opts = ReproduceOptions::new(id, constrained, (0..SEEDS).collect());
    opts.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let result = reproduce(&raw, &opts).expect("harness runs");
    println!("{}", result.render_text());
    result
}

fn law(constrained: bool) -> &'static ReproduceResult {
    static FREE: OnceLock<ReproduceResult> = OnceLock::new();
    static FAIR: OnceLock<ReproduceResult> = OnceLock::new();
    let cell = if constrained { &FAIR } else { &FREE };
    cell.get_or_init(|| harness(DatasetId::Law, "FAIRTAB_LAW_CSV", constrained))
}

fn row(r: &ReproduceResult, kind: ModelKind) -> &AggregateRow {
    r.rows.iter().find(|x| x.model == kind).expect("model was run")
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

const TRANSFORMERS: [ModelKind; 4] = [ModelKind::Tab, ModelKind::Ft, ModelKind::Perceiver, ModelKind::Saint];

#[test]
#[ignore = "needs the Law School CSV in FAIRTAB_LAW_CSV"]
fn criterion_01_law_lr_unconstrained() {
    let lr = row(law(false), ModelKind::Lr);
    println!(
        "LR accuracy {:.5} f1 {:.5} spd {:.5} {:.1}s/run",
        lr.accuracy.mean, lr.f1.mean, lr.spd.mean, lr.mean_duration_secs
    );
    assert!(within(lr.accuracy.mean, 0.90721, 0.01), "accuracy {}", lr.accuracy.mean);
    assert!(within(lr.f1.mean, 0.94984, 0.01), "f1 {}", lr.f1.mean);
    assert!((0.10..=0.28).contains(&lr.spd.mean.abs()), "spd {}", lr.spd.mean);
    assert!(lr.mean_duration_secs < 60.0, "{} s", lr.mean_duration_secs);
}

#[test]
#[ignore = "needs the Law School CSV in FAIRTAB_LAW_CSV"]
fn criterion_02_law_transformers_unconstrained() {
    let r = law(false);
    let mut failures = Vec::new();
    for (kind, target) in TRANSFORMERS.into_iter().zip([0.90016, 0.89839, 0.89919, 0.89214]) {
        let x = row(r, kind);
        println!("{kind}: accuracy {:.5} (target {target}) {:.1}s/run", x.accuracy.mean, x.mean_duration_secs);
        if !within(x.accuracy.mean, target, 0.02) || x.mean_duration_secs > 600.0 {
            failures.push(kind);
        }
    }
    assert!(failures.is_empty(), "out of tolerance: {failures:?}");
}

#[test]
#[ignore = "needs the Law School CSV in FAIRTAB_LAW_CSV"]
fn criterion_03_law_transformers_constrained() {
    let (free, fair) = (law(false), law(true));
    let mut failures = Vec::new();
    for kind in TRANSFORMERS {
        let (a, b) = (row(free, kind), row(fair, kind));
        let eod = b.eod.map_or(f64::NAN, |e| e.mean);
        println!(
            "{kind}: spd {:.5} eod {eod:.5} accuracy {:.5} (unconstrained {:.5})",
            b.spd.mean, b.accuracy.mean, a.accuracy.mean
        );
        if !(b.spd.mean.abs() <= 0.02 && eod.abs() <= 0.02 && within(b.accuracy.mean, a.accuracy.mean, 0.02)) {
            failures.push(kind);
        }
    }
    assert!(failures.is_empty(), "out of tolerance: {failures:?}");
}

fn student() -> &'static ReproduceResult {
    static CELL: OnceLock<ReproduceResult> = OnceLock::new();
    CELL.get_or_init(|| harness(DatasetId::StudentMath, "FAIRTAB_STUDENT_CSV", false))
}

#[test]
#[ignore = "needs the Student-Mathematics CSV in FAIRTAB_STUDENT_CSV"]
fn criterion_04_student_lr() {
    let lr = row(student(), ModelKind::Lr);
    assert!(within(lr.accuracy.mean, 0.93277, 0.05), "accuracy {}", lr.accuracy.mean);
}

#[test]
#[ignore = "needs the Student-Mathematics CSV in FAIRTAB_STUDENT_CSV"]
fn criterion_05_student_saint_diagnostic() {
    let r = student();
    let (lr, saint) = (row(r, ModelKind::Lr), row(r, ModelKind::Saint));
    println!(
        "SAINT accuracy {:.5}, LR {:.5}, degenerate runs {}",
        saint.accuracy.mean, lr.accuracy.mean, saint.degenerate_runs
    );
    assert!(saint.accuracy.mean <= lr.accuracy.mean - 0.15);
    for run in r.runs.iter().filter(|c| c.output.record.model.kind == ModelKind::Saint) {
        let json = serde_json::to_value(run.output.record.report.as_ref().expect("evaluated")).unwrap();
        assert!(json["degenerate_predictor"].is_boolean());
    }
}

#[test]
#[ignore = "needs the Law School CSV in FAIRTAB_LAW_CSV"]
fn criterion_06_law_lr_abroca() {
    let free = row(law(false), ModelKind::Lr).abroca.expect("defined").mean;
    let fair = row(law(true), ModelKind::Lr).abroca.expect("defined").mean;
    println!("LR ABROCA {free:.5} unconstrained, {fair:.5} constrained");
    assert!((0.05..=0.30).contains(&free));
    assert!(fair < free);
}

#[test]
#[ignore = "needs the Law School CSV in FAIRTAB_LAW_CSV"]
fn criterion_10_penalty_never_widens_the_gap() {
    let raw = load_csv(&dataset_path("FAIRTAB_LAW_CSV"), &SchemaConfig::law_school()).unwrap();
    let split = encode_and_split(&raw, SplitSpec::new(SplitSpec::DEFAULT_TEST_FRACTION, 0)).unwrap();
    let base = TrainConfig { batch_size: DatasetId::Law.default_batch_size(), ..TrainConfig::default() };
    let gaps: Vec<(ModelKind, f64, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = ModelKind::ALL
            .into_iter()
            .map(|kind| {
                let split = &split;
                let base = base.clone();
                s.spawn(move || {
                    let gap = |lambda| {
                        let out = run(ModelSpec::new(kind, 0), split, &base.clone().constrained(lambda)).unwrap();
                        out.record.report.unwrap().spd.abs()
                    };
                    (kind, gap(0.0), gap(10.0))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (kind, free, fair) in &gaps {
        println!("{kind}: |spd| {free:.5} at lambda 0, {fair:.5} at lambda 10");
    }
    assert!(gaps.iter().all(|(_, free, fair)| fair <= free));
}

// ---- 7: metric oracles -------------------------------------------------------

struct Instance {
    scores: Vec<f64>,
    labels: Vec<u8>,
    groups: Vec<u8>,
    threshold: f64,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..80);
    let coarse = rng.random_bool(0.5);
    let threshold = if rng.random_bool(0.5) { 0.5 } else { rng.random_range(0.05..0.95) };
    let scores =
        (0..n).map(|_| if coarse { f64::from(rng.random_range(0..5u8)) / 4.0 } else { rng.random::<f64>() }).collect();
    let p_label = rng.random_range(0.05..0.95);
    let labels = (0..n).map(|_| u8::from(rng.random_bool(p_label))).collect();
    let mut groups: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.6))).collect();
    groups[0] = 0;
    groups[1] = 1;
    Instance { scores, labels, groups, threshold }
}

/// Counts `(predicted, label)` pairs of group `z`.
fn counts(x: &Instance, z: u8) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..x.scores.len() {
        if x.groups[i] == z {
            c[usize::from(x.scores[i] >= x.threshold)][usize::from(x.labels[i])] += 1.0;
        }
    }
    c
}

fn rate(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn close(lib: Option<f64>, oracle: Option<f64>) -> bool {
    match (lib, oracle) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-12,
        (None, None) => true,
        _ => false,
    }
}

/// Midpoint rule on 2^20 cells. Knots sit at multiples of 1/m for m < 2^21,
/// so no midpoint lands on one and every evaluation is unambiguous.
fn fine_grid_abroca(a: &RocCurve, b: &RocCurve) -> f64 {
    const N: usize = 1 << 20;
    let h = 1.0 / N as f64;
    let mut cursors = [0usize, 0usize];
    let mut area = 0.0;
    for k in 0..N {
        let x = (k as f64 + 0.5) * h;
        let mut v = [0.0; 2];
        for (j, c) in [a, b].into_iter().enumerate() {
            let p = c.points();
            while p[cursors[j] + 1].0 < x {
                cursors[j] += 1;
            }
            let ((x0, y0), (x1, y1)) = (p[cursors[j]], p[cursors[j] + 1]);
            v[j] = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
        area += (v[0] - v[1]).abs() * h;
    }
    area
}

fn random_scored(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(4..60);
    let coarse = rng.random_bool(0.3);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = labels
        .iter()
        .map(|&y| {
            let s = (rng.random::<f64>() + 0.4 * f64::from(y)).min(1.0);
            if coarse {
                (s * 6.0).round() / 6.0
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn criterion_07_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let x = random_instance(&mut rng);
        let gp = GroupedPredictions::new(x.scores.clone(), x.labels.clone(), x.groups.clone(), x.threshold).unwrap();
        let (u, p) = (counts(&x, 0), counts(&x, 1));
        let n = |c: &[[f64; 2]; 2]| c[0][0] + c[0][1] + c[1][0] + c[1][1];
        let oracle_spd = (u[1][0] + u[1][1]) / n(&u) - (p[1][0] + p[1][1]) / n(&p);
        assert!((spd(&gp).unwrap() - oracle_spd).abs() < 1e-12, "case {case}: spd");

        let tpr = |c: &[[f64; 2]; 2]| rate(c[1][1], c[0][1] + c[1][1]);
        let oracle_eod = tpr(&u).zip(tpr(&p)).map(|(a, b)| a - b);
        match (eod(&gp), oracle_eod) {
            (Ok(v), Some(o)) => assert!((v - o).abs() < 1e-12, "case {case}: eod"),
            (Err(FairnessError::MissingClass(..)), None) => {}
            (got, want) => panic!("case {case}: eod {got:?} vs {want:?}"),
        }

        let m = disparate_mistreatment(&gp).unwrap();
        let err = |c: &[[f64; 2]; 2]| rate(c[1][0] + c[0][1], n(c));
        let fpr = |c: &[[f64; 2]; 2]| rate(c[1][0], c[0][0] + c[1][0]);
        let fnr = |c: &[[f64; 2]; 2]| rate(c[0][1], c[0][1] + c[1][1]);
        let diff = |f: &dyn Fn(&[[f64; 2]; 2]) -> Option<f64>| Some(f(&u)? - f(&p)?);
        assert!(close(m.error_rate_diff, diff(&err)), "case {case}: error rate");
        assert!(close(m.fpr_diff, diff(&fpr)), "case {case}: fpr");
        assert!(close(m.fnr_diff, diff(&fnr)), "case {case}: fnr");
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (sa, ya) = random_scored(&mut rng);
        let (sb, yb) = random_scored(&mut rng);
        let (a, b) = (roc_curve(&sa, &ya).unwrap(), roc_curve(&sb, &yb).unwrap());
        worst = worst.max((abroca(&a, &b) - fine_grid_abroca(&a, &b)).abs());
        // the curve itself: its area equals the pairwise ranking probability
        let pairwise = |s: &[f64], y: &[u8]| {
            let (mut wins, mut pairs) = (0.0, 0.0);
            for i in (0..s.len()).filter(|&i| y[i] == 1) {
                for j in (0..s.len()).filter(|&j| y[j] == 0) {
                    pairs += 1.0;
                    wins += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            wins / pairs
        };
        assert!((a.auc() - pairwise(&sa, &ya)).abs() < 1e-12);
    }
    println!("largest ABROCA deviation from the fine-grid integral: {worst:e}");
    assert!(worst < 1e-6);
}

// ---- 8: gradient checks --------------------------------------------------------

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Inputs bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (v.abs() + 0.05));
    t
}

/// Contracts `v` against fixed random weights into a scalar.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(v));
    let w = g.constant(w);
    let prod = g.mul(v, w)?;
    g.sum_all(prod)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, EngineError>>;

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let r = &mut r;
    let unary = |f: fn(&mut Graph, Var) -> Result<Var, EngineError>| -> Build {
        Box::new(move |g, v| {
            let y = f(g, v[0])?;
            project(g, y, 1)
        })
    };
    vec![
        (
            "matmul",
            vec![random_tensor(r, &[3, 4]), random_tensor(r, &[4, 2])],
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "batched matmul",
            vec![random_tensor(r, &[2, 3, 4]), random_tensor(r, &[2, 4, 2])],
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "add",
            vec![random_tensor(r, &[3, 4]), random_tensor(r, &[4])],
            Box::new(|g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "mul",
            vec![random_tensor(r, &[2, 3, 4]), random_tensor(r, &[3, 1])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "sub",
            vec![random_tensor(r, &[3, 4]), random_tensor(r, &[1, 4])],
            Box::new(|g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "scale",
            vec![random_tensor(r, &[5])],
            Box::new(|g, v| {
                let y = g.scale(v[0], -1.7)?;
                project(g, y, 1)
            }),
        ),
        (
            "concat",
            vec![random_tensor(r, &[2, 3]), random_tensor(r, &[2, 2])],
            Box::new(|g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                project(g, y, 1)
            }),
        ),
        (
            "slice",
            vec![random_tensor(r, &[3, 5])],
            Box::new(|g, v| {
                let y = g.slice(v[0], 1, 1, 4)?;
                project(g, y, 1)
            }),
        ),
        (
            "reshape",
            vec![random_tensor(r, &[2, 6])],
            Box::new(|g, v| {
                let y = g.reshape(v[0], &[3, 4])?;
                project(g, y, 1)
            }),
        ),
        (
            "permute",
            vec![random_tensor(r, &[2, 3, 4])],
            Box::new(|g, v| {
                let y = g.permute(v[0], &[2, 0, 1])?;
                project(g, y, 1)
            }),
        ),
        (
            "transpose",
            vec![random_tensor(r, &[2, 3, 4])],
            Box::new(|g, v| {
                let y = g.transpose(v[0])?;
                project(g, y, 1)
            }),
        ),
        (
            "sum",
            vec![random_tensor(r, &[3, 4])],
            Box::new(|g, v| {
                let y = g.sum(v[0], 0)?;
                project(g, y, 1)
            }),
        ),
        (
            "mean",
            vec![random_tensor(r, &[3, 4])],
            Box::new(|g, v| {
                let y = g.mean(v[0], 1)?;
                project(g, y, 1)
            }),
        ),
        (
            "sum_all",
            vec![random_tensor(r, &[3, 4])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[0])?;
                g.sum_all(y)
            }),
        ),
        (
            "mean_all",
            vec![random_tensor(r, &[3, 4])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[0])?;
                g.mean_all(y)
            }),
        ),
        ("softmax", vec![random_tensor(r, &[3, 5])], unary(Graph::softmax)),
        (
            "layer_norm",
            vec![random_tensor(r, &[3, 5])],
            Box::new(|g, v| {
                let y = g.layer_norm(v[0], 1e-5)?;
                project(g, y, 1)
            }),
        ),
        ("relu", vec![away_from_zero(r, &[4, 4])], unary(Graph::relu)),
        ("gelu", vec![random_tensor(r, &[4, 4])], unary(Graph::gelu)),
        ("sigmoid", vec![random_tensor(r, &[4, 4])], unary(Graph::sigmoid)),
        (
            "gather",
            vec![random_tensor(r, &[4, 3])],
            Box::new(|g, v| {
                let y = g.gather(v[0], &[2, 0, 2, 3])?;
                project(g, y, 1)
            }),
        ),
        (
            "binary_cross_entropy",
            vec![random_tensor(r, &[5, 1])],
            Box::new(|g, v| {
                let p = g.sigmoid(v[0])?;
                g.binary_cross_entropy(p, &Tensor::new(vec![5, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap())
            }),
        ),
        (
            "parity_penalty",
            vec![random_tensor(r, &[6, 1])],
            Box::new(|g, v| {
                let p = g.sigmoid(v[0])?;
                Ok(parity_penalty(g, p, &[0, 1, 1, 0, 1, 1])?.expect("both groups"))
            }),
        ),
    ]
}

fn layout() -> FeatureLayout {
    FeatureLayout {
        cat_names: vec!["a".into(), "b".into()],
        cat_cardinalities: vec![3, 2],
        num_names: vec!["x".into(), "y".into(), "w".into()],
    }
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize) -> Batch {
    let l = layout();
    let mut cat = Vec::new();
    let mut num = Vec::new();
    for _ in 0..rows {
        cat.extend(l.cat_cardinalities.iter().map(|&c| rng.random_range(0..=c)));
        num.extend((0..l.n_num()).map(|_| rng.random_range(-2.0..2.0)));
    }
    Batch { rows, cat, num }
}

/// A model with every parameter redrawn, so that zero-initialized rows and
/// biases take part in the checks.
fn scrambled(spec: ModelSpec, seed: u64) -> Classifier {
    let mut m = Classifier::new(spec, layout()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
    m
}

fn miniature(kind: ModelKind) -> ModelSpec {
    ModelSpec { kind, embed_dim: 4, n_layers: 1, n_heads: 2, mlp_hidden: 4, n_latents: 2, dropout: 0.0, seed: 3 }
}

#[test]
fn criterion_08_gradient_checks() {
    let mut failures = Vec::new();
    for (name, inputs, build) in primitive_cases() {
        let e = gradcheck::check(&inputs, build).unwrap().max_rel_error;
        println!("{name:<22} {e:.2e}");
        if e.is_nan() || e >= GRAD_TOL {
            failures.push(name.to_string());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for kind in ModelKind::ALL {
        let m = scrambled(miniature(kind), 81);
        let batch = random_batch(&mut rng, 4);
        let targets = Tensor::new(vec![4, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let report = gradcheck::check(m.params().tensors(), |g, p| {
            let probs = m.forward(g, p, &batch, &mut ForwardCtx::eval()).map_err(|e| match e {
                ModelError::Engine(e) => e,
                other => panic!("{other}"),
            })?;
            g.binary_cross_entropy(probs, &targets)
        })
        .unwrap();
        println!("{:<22} {:.2e}", kind.label(), report.max_rel_error);
        if report.max_rel_error.is_nan() || report.max_rel_error >= GRAD_TOL {
            failures.push(kind.label().to_string());
        }
    }
    assert!(failures.is_empty(), "gradient checks above {GRAD_TOL}: {failures:?}");
}

// ---- 9: structural properties ------------------------------------------------

#[test]
fn criterion_09_structural_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let spec = |kind| ModelSpec {
        kind,
        embed_dim: 8,
        n_layers: 2,
        n_heads: 2,
        mlp_hidden: 16,
        n_latents: 4,
        dropout: 0.1,
        seed: 9,
    };

    // row-coupled model: permuting the batch permutes the outputs, bit for bit
    for m in [Classifier::new(spec(ModelKind::Saint), layout()).unwrap(), scrambled(spec(ModelKind::Saint), 91)] {
        let batch = random_batch(&mut rng, 32);
        let base = m.predict_proba(&batch).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..32).collect();
            perm.shuffle(&mut rng);
            let out = m.predict_proba(&batch.select(&perm, 2, 3)).unwrap();
            assert_eq!(out, perm.iter().map(|&i| base[i]).collect::<Vec<_>>());
        }
    }

    // per-sample models: a row scores the same alone and in any batch
    for kind in [ModelKind::Lr, ModelKind::Tab, ModelKind::Ft, ModelKind::Perceiver] {
        let m = scrambled(spec(kind), 92);
        let batch = random_batch(&mut rng, 20);
        let together = m.predict_proba(&batch).unwrap();
        for (i, &p) in together.iter().enumerate() {
            assert_eq!(m.predict_proba(&batch.select(&[i], 2, 3)).unwrap(), vec![p], "{kind} row {i}");
        }
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let out = m.predict_proba(&batch.select(&perm, 2, 3)).unwrap();
        assert_eq!(out, perm.iter().map(|&i| together[i]).collect::<Vec<_>>(), "{kind}");
    }

    // lambda = 0 is the unpenalized objective, exactly
    let raw = parse_csv(&synthetic::law_school_csv(240, 9), &SchemaConfig::law_school()).unwrap();
    let split = encode_and_split(&raw, SplitSpec::new(0.3, 9)).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 32, learning_rate: 0.01, ..TrainConfig::default() };
    for kind in ModelKind::ALL {
        let small = ModelSpec {
            kind,
            embed_dim: 4,
            n_layers: 1,
            n_heads: 2,
            mlp_hidden: 8,
            n_latents: 2,
            dropout: 0.1,
            seed: 0,
        };
        let mut plain = Classifier::new(small, FeatureLayout::from_meta(&split.train.meta)).unwrap();
        let mut tracked = plain.clone();
        let a = train(&mut plain, &split.train, &cfg).unwrap();
        let b = train(&mut tracked, &split.train, &TrainConfig { track_penalty: true, ..cfg.clone() }).unwrap();
        assert_eq!(plain.params(), tracked.params(), "{kind}");
        assert!(a.epochs.iter().zip(&b.epochs).all(|(x, y)| x.loss == y.loss && y.penalty.is_some()));
    }
}
