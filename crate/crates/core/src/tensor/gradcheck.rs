use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Mode, Result, Tensor, TensorError, Var};
use crate::params::{ParamId, ParamStore};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over checked coordinates.
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Parameter (if any) and flat index of the worst coordinate.
    pub worst: Option<(Option<ParamId>, usize)>,
}

fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::Invalid(format!("grad_check eps {eps} outside [1e-7, 1e-4]")));
    }
    Ok(())
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(TensorError::Shape {
            op: "grad_check",
            lhs: t.shape().to_vec(),
            rhs: vec![1],
        });
    }
    let y = t.data()[0];
    if !y.is_finite() {
        return Err(TensorError::NonFinite(y));
    }
    Ok(y)
}

/// Compares the autodiff gradient of `f` at `theta` with central
/// differences over every coordinate of `theta`.
///
/// `f` receives a fresh train-mode graph (seed 0) and the leaf holding
/// `theta`, and must return a scalar.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new(Mode::Train, 0);
    let x = g.leaf(theta.clone());
    let y = f(&mut g, x)?;
    scalar(&g, y)?;
    g.backward(y)?;
    let ad = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; theta.numel()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new(Mode::Train, 0);
        let x = g.leaf(t);
        let y = f(&mut g, x)?;
        scalar(&g, y)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: theta.numel(),
        worst: None,
    };
    for (i, &g) in ad.iter().enumerate() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += eps;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = rel_error(g, fd);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((None, i));
        }
    }
    Ok(report)
}

/// Finite-difference check over all parameters of a store.
///
/// `autodiff_loss` builds the graph whose backward pass is being verified;
/// `reference_loss` is differenced numerically. They are usually the same
/// function; they differ when the backward pass is defined through a
/// surrogate (straight-through estimators), in which case `reference_loss`
/// must be the function whose true gradient the surrogate computes.
///
/// At most `max_coords` coordinates are sampled (uniformly, seeded).
pub fn grad_check_params<A, R>(
    store: &ParamStore,
    autodiff_loss: A,
    reference_loss: R,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    A: Fn(&ParamStore, &mut Graph) -> Result<Var>,
    R: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new(Mode::Train, seed);
    let y = autodiff_loss(store, &mut g)?;
    scalar(&g, y)?;
    g.backward(y)?;
    let mut ad: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
    for (id, grad) in g.param_grads() {
        ad[id.index()].copy_from_slice(grad);
    }

    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.numel()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut work = store.clone();
    let eval = |work: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(Mode::Train, seed);
        let y = reference_loss(work, &mut g)?;
        scalar(&g, y)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: chosen.len(),
        worst: None,
    };
    for c in chosen {
        let (id, i) = coords[c];
        let orig = store.value(id).data()[i];
        work.value_mut(id).data_mut()[i] = orig + eps;
        let fp = eval(&work)?;
        work.value_mut(id).data_mut()[i] = orig - eps;
        let fm = eval(&work)?;
        work.value_mut(id).data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let err = rel_error(ad[id.index()][i], fd);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((Some(id), i));
        }
    }
    Ok(report)
}
