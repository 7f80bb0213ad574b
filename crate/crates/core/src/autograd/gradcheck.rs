//! Central finite-difference gradient checker.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! Elements where the numeric derivative itself is unstable (the estimates at
//! `h` and `h/2` disagree, e.g. a ReLU or max-pool switch inside the stencil)
//! are counted as skipped rather than compared.

use std::fmt;

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    pub floor: f64,
    /// Tensors larger than this are checked on a random subsample of elements.
    pub max_elems_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            tol: 1e-4,
            floor: 1e-3,
            max_elems_per_param: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.pass)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<32} checked={:<4} skipped={:<3} max_rel_err={:.3e} {}",
                p.name,
                p.checked,
                p.skipped,
                p.max_rel_err,
                if p.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn eval_loss<F>(params: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    g.value(loss)
        .item()
        .ok_or_else(|| Error::GradCheck("builder returned a non-scalar node".into()))
}

/// Compares analytic parameter gradients of `build` against central differences.
pub fn check_gradients<F>(params: &ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.check_finite()?;
        g.backward(loss)?.into_params()
    };
    let l0 = eval_loss(params, &build)?;
    let l1 = eval_loss(params, &build)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::GradCheck(format!(
            "graph builder is not deterministic: loss {l0} then {l1}"
        )));
    }

    let mut work = params.clone();
    let base = Rng::new(opts.seed);
    let mut report = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let (name, tensor) = params.by_index(idx);
        let n = tensor.len();
        let elems: Vec<usize> = if n <= opts.max_elems_per_param {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            base.stream(name).shuffle(&mut all);
            all.truncate(opts.max_elems_per_param);
            all.sort_unstable();
            all
        };
        let zeros = vec![0.0; n];
        let a_grad = analytic.get(idx).unwrap_or(&zeros);

        let mut central = |e: usize, h: f64| -> Result<f64> {
            let orig = work.by_index(idx).1.data()[e];
            work.by_index_mut(idx).1.data_mut()[e] = orig + h;
            let plus = eval_loss(&work, &build)?;
            work.by_index_mut(idx).1.data_mut()[e] = orig - h;
            let minus = eval_loss(&work, &build)?;
            work.by_index_mut(idx).1.data_mut()[e] = orig;
            Ok((plus - minus) / (2.0 * h))
        };

        let mut check = ParamCheck {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            pass: true,
        };
        for e in elems {
            let num = central(e, opts.h)?;
            let num_half = central(e, opts.h / 2.0)?;
            let scale = num.abs().max(num_half.abs()).max(opts.floor);
            if (num - num_half).abs() / scale > opts.tol {
                check.skipped += 1;
                continue;
            }
            let a = a_grad[e];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(opts.floor);
            check.checked += 1;
            check.max_rel_err = check.max_rel_err.max(rel);
        }
        check.pass = check.max_rel_err <= opts.tol && (check.checked > 0 || n == 0);
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn linear_store(seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut s = ParamStore::new();
        let mut randn = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<_>>();
        s.insert("x", Tensor::vector(randn(8)));
        s.insert("w", Tensor::new(vec![5, 8], randn(40)).unwrap());
        s.insert("b", Tensor::vector(randn(5)));
        s
    }

    fn linear_sq(g: &mut Graph) -> Result<NodeId> {
        let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
        let y = g.linear(x, w, b)?;
        let z = g.input(Tensor::vector(vec![0.3, -0.1, 0.7, 0.0, 1.1]));
        let d = g.square_diff(y, z)?;
        Ok(g.sum(d))
    }

    #[test]
    fn linear_layer_passes_tight_tolerance() {
        let opts = GradCheckOptions {
            h: 1e-5,
            tol: 1e-6,
            ..Default::default()
        };
        let r = check_gradients(&linear_store(1), linear_sq, &opts).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.max_rel_err() <= 1e-6);
    }

    #[test]
    fn corrupted_gradient_is_reported_by_name() {
        let build = |g: &mut Graph| -> Result<NodeId> {
            let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
            let w = g.grad_scale(w, 2.0);
            let y = g.linear(x, w, b)?;
            let y2 = g.square_diff(y, y)?;
            let s = g.sum(y);
            let s2 = g.sum(y2);
            g.add(s, s2)
        };
        let r = check_gradients(&linear_store(2), build, &GradCheckOptions::default()).unwrap();
        let failed: Vec<_> = r.failures().map(|p| p.name.as_str()).collect();
        assert_eq!(failed, ["w"]);
    }

    #[test]
    fn nondeterministic_builder_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let build = |g: &mut Graph| -> Result<NodeId> {
            calls.set(calls.get() + 1.0);
            let x = g.param("x")?;
            let s = g.sum(x);
            Ok(g.scale(s, calls.get()))
        };
        let err = check_gradients(&linear_store(3), build, &GradCheckOptions::default()).unwrap_err();
        assert!(err.to_string().contains("not deterministic"));
    }
}
