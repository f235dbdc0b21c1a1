//! Central finite-difference verification of tape gradients (f64 only).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GradFault, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Gradient-rule corruption for negative controls.
    pub fault: Option<GradFault>,
    /// Also compare the derivative along one random unit direction (equal
    /// magnitudes, random signs) per tensor, which touches every coordinate
    /// at the cost of two evaluations.
    pub directional: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-5, coords_per_tensor: 100, seed: 0, fault: None, directional: false }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub directional_rel_err: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn coords(&self) -> usize {
        self.tensors.iter().map(|t| t.coords).sum()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar `f` against central differences
/// over every parameter in `params`.
pub fn gradcheck<F>(params: &ParamStore<f64>, f: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var<f64>>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::inference();
        Ok(f(&tape, p)?.data()[0])
    };
    let base = eval(params)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(base, again));
    }

    let tape = match &opts.fault {
        Some(fault) => Tape::with_fault(fault.clone()),
        None => Tape::new(),
    };
    let root = f(&tape, params)?;
    let grads = tape.backward(&root)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut tensors = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.numel();
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = grads.param(&name);
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + opts.eps;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - opts.eps;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        let directional_rel_err = if opts.directional {
            let unit = 1.0 / (n as f64).sqrt();
            let dir: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { unit } else { -unit }).collect();
            let orig = params.get(&name)?.clone();
            let shifted = |sign: f64| -> Result<Tensor<f64>> {
                let data = orig.data().iter().zip(&dir).map(|(&v, &d)| v + sign * opts.eps * d).collect();
                Tensor::new(orig.shape(), data)
            };
            *work.get_mut(&name)? = shifted(1.0)?;
            let plus = eval(&work)?;
            *work.get_mut(&name)? = shifted(-1.0)?;
            let minus = eval(&work)?;
            *work.get_mut(&name)? = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.map_or(0.0, |g| g.data().iter().zip(&dir).map(|(x, d)| x * d).sum());
            let e = relative_error(a, numeric);
            worst = worst.max(e);
            Some(e)
        } else {
            None
        };
        tensors.push(TensorCheck { name, coords: coords.len(), max_rel_err: worst, directional_rel_err });
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport { max_rel_err, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(3.0));
        let report = gradcheck(
            &p,
            |t, p| {
                let w = t.param(p, "w")?;
                t.mul(&w, &w)
            },
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-10, "{}", report.max_rel_err);
    }

    #[test]
    fn detects_nondeterminism() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0));
        let calls = Cell::new(0.0);
        let err = gradcheck(
            &p,
            |t, p| {
                calls.set(calls.get() + 1.0);
                let w = t.param(p, "w")?;
                Ok(t.scale(&w, calls.get()))
            },
            &GradcheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic(..)));
    }

    #[test]
    fn corrupted_rule_is_caught() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap());
        let f = |t: &Tape<f64>, p: &ParamStore<f64>| {
            let w = t.param(p, "w")?;
            Ok(t.sum(&t.silu(&w)))
        };
        let ok = gradcheck(&p, f, &GradcheckOptions::default()).unwrap();
        assert!(ok.max_rel_err < 1e-8);
        let opts = GradcheckOptions {
            fault: Some(GradFault { op: "silu".into(), factor: 1.5 }),
            ..Default::default()
        };
        let bad = gradcheck(&p, f, &opts).unwrap();
        assert!(bad.max_rel_err > 0.1);
    }

    #[test]
    fn directional_probe_agrees_and_catches_faults() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_f64(&[2, 3], &[0.3, -1.2, 2.0, 0.7, -0.1, 1.5]).unwrap());
        let f = |t: &Tape<f64>, p: &ParamStore<f64>| {
            let w = t.param(p, "w")?;
            let s = t.silu(&w);
            Ok(t.sum(&t.mul(&s, &s)?))
        };
        let opts = GradcheckOptions { coords_per_tensor: 0, directional: true, ..Default::default() };
        let ok = gradcheck(&p, f, &opts).unwrap();
        assert_eq!(ok.coords(), 0);
        assert!(ok.tensors[0].directional_rel_err.unwrap() < 1e-8);
        let bad = GradcheckOptions { fault: Some(GradFault { op: "silu".into(), factor: 2.0 }), ..opts };
        assert!(gradcheck(&p, f, &bad).unwrap().max_rel_err > 0.1);
    }
}
