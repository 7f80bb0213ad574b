//! Finite-difference gradient suite: every differentiable op in isolation,
//! then the full identification+verification objective, over many seeded
//! random instances.

use std::fmt;

use crate::autograd::{check_gradients, GradCheckOptions, GradCheckReport, Graph, NodeId};
use crate::error::Result;
use crate::losses::{combined_objective, loss_terms, LossMode, LossWeights};
use crate::model::{Heads, IdvModel, ModelConfig, Pooling, Stage};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    pub check: GradCheckOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 0,
            check: GradCheckOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: String,
    pub instance: usize,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub results: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.report.passed())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.results.iter().map(|r| r.report.max_rel_err()).fold(0.0, f64::max)
    }

    /// Worst relative error per case name, in suite order.
    pub fn by_case(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for r in &self.results {
            let (err, ok) = (r.report.max_rel_err(), r.report.passed());
            match out.iter_mut().find(|(c, ..)| *c == r.case) {
                Some(e) => {
                    e.1 = e.1.max(err);
                    e.2 &= ok;
                }
                None => out.push((r.case.clone(), err, ok)),
            }
        }
        out
    }

    pub fn skipped(&self) -> usize {
        self.results
            .iter()
            .flat_map(|r| &r.report.params)
            .map(|p| p.skipped)
            .sum()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (case, err, ok) in self.by_case() {
            writeln!(f, "{case:<24} max_rel_err={err:.3e} {}", if ok { "ok" } else { "FAIL" })?;
        }
        for r in self.results.iter().filter(|r| !r.report.passed()) {
            writeln!(f, "-- {} instance {}:", r.case, r.instance)?;
            write!(f, "{}", r.report)?;
        }
        writeln!(
            f,
            "overall: {} checks, {} kink-skipped elements, max_rel_err={:.3e} {}",
            self.results.len(),
            self.skipped(),
            self.max_rel_err(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape matches data")
}

/// Reduces `y` to a scalar through a squared distance to a fixed target, so
/// that upstream gradients are non-uniform.
fn readout(g: &mut Graph, y: NodeId, rng_seed: u64) -> Result<NodeId> {
    let shape = g.value(y).shape().to_vec();
    let mut r = Rng::new(rng_seed).stream("readout");
    let target = g.input(randn(&mut r, &shape));
    let d = g.square_diff(y, target)?;
    Ok(g.sum(d))
}

type Builder = Box<dyn Fn(&mut Graph) -> Result<NodeId>>;

fn op_case(name: &str, rng: &mut Rng, seed: u64) -> (ParamStore, Builder) {
    let mut s = ParamStore::new();
    let build: Builder = match name {
        "conv2d" => {
            s.insert("x", randn(rng, &[2, 5, 5]));
            s.insert("w", randn(rng, &[3, 2, 3, 3]));
            s.insert("b", randn(rng, &[3]));
            Box::new(move |g| {
                let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
                let y = g.conv2d(x, w, b, 1, 1)?;
                readout(g, y, seed)
            })
        }
        "conv2d_strided" => {
            s.insert("x", randn(rng, &[3, 2, 6, 6]));
            s.insert("w", randn(rng, &[2, 2, 3, 3]));
            s.insert("b", randn(rng, &[2]));
            Box::new(move |g| {
                let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
                let y = g.conv2d(x, w, b, 2, 0)?;
                readout(g, y, seed)
            })
        }
        "relu" => {
            s.insert("x", randn(rng, &[12]));
            Box::new(move |g| {
                let x = g.param("x")?;
                let y = g.relu(x);
                readout(g, y, seed)
            })
        }
        "maxpool2" => {
            s.insert("x", randn(rng, &[2, 4, 6]));
            Box::new(move |g| {
                let x = g.param("x")?;
                let y = g.maxpool2(x)?;
                readout(g, y, seed)
            })
        }
        "global_max_pool" => {
            s.insert("x", randn(rng, &[3, 4, 4]));
            Box::new(move |g| {
                let x = g.param("x")?;
                let y = g.global_max_pool(x)?;
                readout(g, y, seed)
            })
        }
        "linear" => {
            s.insert("x", randn(rng, &[6]));
            s.insert("w", randn(rng, &[4, 6]));
            s.insert("b", randn(rng, &[4]));
            Box::new(move |g| {
                let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
                let y = g.linear(x, w, b)?;
                readout(g, y, seed)
            })
        }
        "softmax_neg_log" => {
            s.insert("x", randn(rng, &[5]));
            let t = rng.below(5);
            Box::new(move |g| {
                let x = g.param("x")?;
                let p = g.softmax(x)?;
                g.neg_log(p, t)
            })
        }
        "dropout" => {
            s.insert("x", randn(rng, &[10]));
            Box::new(move |g| {
                let x = g.param("x")?;
                let mut r = Rng::new(seed).stream("dropout");
                let y = g.dropout(x, 0.5, true, &mut r)?;
                readout(g, y, seed)
            })
        }
        "square_diff" => {
            s.insert("a", randn(rng, &[7]));
            s.insert("b", randn(rng, &[7]));
            Box::new(move |g| {
                let (a, b) = (g.param("a")?, g.param("b")?);
                let y = g.square_diff(a, b)?;
                readout(g, y, seed)
            })
        }
        "scale_add_reshape" => {
            s.insert("a", randn(rng, &[2, 3]));
            s.insert("b", randn(rng, &[6]));
            Box::new(move |g| {
                let (a, b) = (g.param("a")?, g.param("b")?);
                let a = g.flatten(a);
                let a = g.scale(a, -1.5);
                let y = g.add(a, b)?;
                let y = g.reshape(y, &[3, 2])?;
                readout(g, y, seed)
            })
        }
        "contrastive_same" | "contrastive_diff" => {
            let same = name == "contrastive_same";
            s.insert("a", randn(rng, &[4]));
            s.insert("b", randn(rng, &[4]));
            // margin above the typical distance so the hinge is active
            Box::new(move |g| {
                let (a, b) = (g.param("a")?, g.param("b")?);
                g.contrastive(a, b, same, 4.0)
            })
        }
        _ => unreachable!("unknown op case {name}"),
    };
    (s, build)
}

pub const OP_CASES: &[&str] = &[
    "conv2d",
    "conv2d_strided",
    "relu",
    "maxpool2",
    "global_max_pool",
    "linear",
    "softmax_neg_log",
    "dropout",
    "square_diff",
    "scale_add_reshape",
    "contrastive_same",
    "contrastive_diff",
];

/// Small network used for the end-to-end check.
pub fn composite_config(pooling: Pooling) -> ModelConfig {
    ModelConfig {
        input_channels: 3,
        input_size: 8,
        stages: vec![
            Stage { channels: 4, kernel: 3, pool: true },
            Stage { channels: 5, kernel: 3, pool: false },
        ],
        embedding_dim: 6,
        num_identities: 3,
        dropout_rate: 0.5,
        pooling,
    }
}

/// Full training objective of one pair, in training mode (dropout active
/// with fixed masks), with random non-zero biases.
fn composite_case(instance_seed: u64, pooling: Pooling, mode: LossMode) -> Result<(ParamStore, Builder)> {
    let root = Rng::new(instance_seed);
    let mut model = IdvModel::init(composite_config(pooling), &root.stream("init"))?;
    let mut r = root.stream("biases");
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = 0.1 * r.normal();
            }
        }
    }
    let mut r = root.stream("inputs");
    let x1 = randn(&mut r, &[3, 8, 8]);
    let x2 = randn(&mut r, &[3, 8, 8]);
    let (t1, t2) = (r.below(3), r.below(3));
    let same = r.bernoulli(0.5);
    let params = model.params.clone();
    let build: Builder = Box::new(move |g| {
        let (a, b) = (g.input(x1.clone()), g.input(x2.clone()));
        let mut d1 = root.stream("dropout/1");
        let mut d2 = root.stream("dropout/2");
        let heads = match mode {
            LossMode::Contrastive => Heads { ident: true, verif: false },
            _ => Heads::ALL,
        };
        let pair = model.pair_graph(g, a, b, true, [&mut d1, &mut d2], heads)?;
        let terms = loss_terms(g, &pair, t1, t2, same, mode, 1.0)?;
        combined_objective(g, &terms, LossWeights::default())
    });
    Ok((params, build))
}

/// Runs every op case and the composite objectives `instances` times.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let root = Rng::new(opts.seed);
    let mut results = Vec::new();
    for i in 0..opts.instances {
        let instance_seed = root.stream(&format!("instance/{i}")).seed();
        let mut rng = Rng::new(instance_seed);
        let check = GradCheckOptions {
            seed: instance_seed,
            ..opts.check.clone()
        };
        for &name in OP_CASES {
            let (params, build) = op_case(name, &mut rng, instance_seed);
            let report = check_gradients(&params, build, &check)?;
            results.push(CaseResult {
                case: name.to_string(),
                instance: i,
                report,
            });
        }
        let composites = [
            ("composite_I+V", Pooling::Flatten, LossMode::IdentVerif),
            ("composite_I+V_mac", Pooling::Mac, LossMode::IdentVerif),
            ("composite_contrastive", Pooling::Flatten, LossMode::Contrastive),
        ];
        for (name, pooling, mode) in composites {
            let (params, build) = composite_case(instance_seed, pooling, mode)?;
            let report = check_gradients(&params, build, &check)?;
            results.push(CaseResult {
                case: name.to_string(),
                instance: i,
                report,
            });
        }
    }
    Ok(SuiteReport { results })
}
