//! Covariance functions and their analytic hyperparameter derivatives.
//!
//! Three kernel forms are supported: the squared exponential, the periodic
//! kernel, and products of those. A product carries the single output
//! variance for the whole tree; its children run at unit variance. Every
//! component reads only its `active_dims` of the input.
//!
//! Hyperparameters flatten to a canonical order used everywhere a parameter
//! vector appears: `[variance, lengthscales in tree order, periods in tree
//! order]`. Model-level mean and noise follow after these at the model layer.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_unit_variance() -> f64 {
    1.0
}

/// Description of a covariance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// k(x, x') = variance * exp(-||x - x'||^2 / (2 l^2)), distance over
    /// `active_dims`.
    SquaredExponential {
        lengthscale: f64,
        #[serde(default = "default_unit_variance")]
        variance: f64,
        active_dims: Vec<usize>,
    },
    /// k(x, x') = variance * exp(-2 sin^2(pi |x - x'| / p) / l^2) over a
    /// single active dimension.
    Periodic {
        lengthscale: f64,
        period: f64,
        #[serde(default = "default_unit_variance")]
        variance: f64,
        active_dims: Vec<usize>,
    },
    /// Product of child kernels with one overall variance; children must
    /// carry unit variance.
    Product {
        #[serde(default = "default_unit_variance")]
        variance: f64,
        children: Vec<KernelSpec>,
    },
}

impl KernelSpec {
    pub fn se(lengthscale: f64, variance: f64, active_dims: Vec<usize>) -> Self {
        KernelSpec::SquaredExponential {
            lengthscale,
            variance,
            active_dims,
        }
    }

    pub fn periodic(lengthscale: f64, period: f64, variance: f64, active_dims: Vec<usize>) -> Self {
        KernelSpec::Periodic {
            lengthscale,
            period,
            variance,
            active_dims,
        }
    }

    pub fn product(variance: f64, children: Vec<KernelSpec>) -> Self {
        KernelSpec::Product { variance, children }
    }

    /// Output variance of the full tree.
    pub fn variance(&self) -> f64 {
        match self {
            KernelSpec::SquaredExponential { variance, .. }
            | KernelSpec::Periodic { variance, .. }
            | KernelSpec::Product { variance, .. } => *variance,
        }
    }

    /// Check the structural invariants against an input dimensionality.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.validate_inner(input_dim, true)
    }

    fn validate_inner(&self, input_dim: usize, is_root: bool) -> Result<()> {
        let check_dims = |dims: &[usize]| -> Result<()> {
            if dims.is_empty() {
                return Err(Error::invalid("active_dims must be non-empty"));
            }
            for &d in dims {
                if d >= input_dim {
                    return Err(Error::invalid(format!(
                        "active dimension {d} out of range for {input_dim}-dimensional inputs"
                    )));
                }
            }
            let mut sorted = dims.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != dims.len() {
                return Err(Error::invalid("active_dims must not repeat"));
            }
            Ok(())
        };
        let check_positive = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
            Ok(())
        };
        match self {
            KernelSpec::SquaredExponential {
                lengthscale,
                variance,
                active_dims,
            } => {
                check_positive("lengthscale", *lengthscale)?;
                check_positive("variance", *variance)?;
                if !is_root && *variance != 1.0 {
                    return Err(Error::invalid(
                        "product children must carry unit variance",
                    ));
                }
                check_dims(active_dims)
            }
            KernelSpec::Periodic {
                lengthscale,
                period,
                variance,
                active_dims,
            } => {
                check_positive("lengthscale", *lengthscale)?;
                check_positive("period", *period)?;
                check_positive("variance", *variance)?;
                if !is_root && *variance != 1.0 {
                    return Err(Error::invalid(
                        "product children must carry unit variance",
                    ));
                }
                if active_dims.len() != 1 {
                    return Err(Error::invalid(
                        "the periodic kernel reads exactly one active dimension",
                    ));
                }
                check_dims(active_dims)
            }
            KernelSpec::Product { variance, children } => {
                if !is_root {
                    return Err(Error::invalid("nested products are not supported"));
                }
                check_positive("variance", *variance)?;
                if children.len() < 2 {
                    return Err(Error::invalid("a product kernel needs at least two children"));
                }
                for child in children {
                    child.validate_inner(input_dim, false)?;
                }
                Ok(())
            }
        }
    }

    /// Kernel hyperparameters in canonical order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![self.variance()];
        for c in self.components() {
            out.push(c.lengthscale());
        }
        for c in self.components() {
            if let Component::Periodic { period, .. } = c {
                out.push(*period);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Names matching [`KernelSpec::params`], unique within the tree.
    pub fn param_names(&self) -> Vec<String> {
        let comps: Vec<Component> = self.components().collect();
        let label = |i: usize| -> String {
            let kind = match comps[i] {
                Component::Se { .. } => "se",
                Component::Periodic { .. } => "periodic",
            };
            let dup = comps
                .iter()
                .enumerate()
                .any(|(j, c)| j != i && c.kind_str() == comps[i].kind_str());
            if comps.len() == 1 {
                String::new()
            } else if dup {
                format!("{kind}{i}_")
            } else {
                format!("{kind}_")
            }
        };
        let mut out = vec!["variance".to_string()];
        for i in 0..comps.len() {
            out.push(format!("{}lengthscale", label(i)));
        }
        for i in 0..comps.len() {
            if matches!(comps[i], Component::Periodic { .. }) {
                out.push(format!("{}period", label(i)));
            }
        }
        out
    }

    /// Rebuild the spec with a new canonical parameter vector.
    pub fn with_params(&self, params: &[f64]) -> Result<KernelSpec> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} kernel parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut spec = self.clone();
        let n_comps = spec.components().count();
        let mut ls = params[1..=n_comps].iter().copied();
        let mut ps = params[1 + n_comps..].iter().copied();
        match &mut spec {
            KernelSpec::SquaredExponential {
                lengthscale,
                variance,
                ..
            } => {
                *variance = params[0];
                *lengthscale = ls.next().unwrap();
            }
            KernelSpec::Periodic {
                lengthscale,
                period,
                variance,
                ..
            } => {
                *variance = params[0];
                *lengthscale = ls.next().unwrap();
                *period = ps.next().unwrap();
            }
            KernelSpec::Product { variance, children } => {
                *variance = params[0];
                for child in children.iter_mut() {
                    match child {
                        KernelSpec::SquaredExponential { lengthscale, .. } => {
                            *lengthscale = ls.next().unwrap();
                        }
                        KernelSpec::Periodic {
                            lengthscale,
                            period,
                            ..
                        } => {
                            *lengthscale = ls.next().unwrap();
                            *period = ps.next().unwrap();
                        }
                        KernelSpec::Product { .. } => unreachable!("validated: no nested products"),
                    }
                }
                // periods come after every lengthscale
                let mut pi = ps;
                for child in children.iter_mut() {
                    if let KernelSpec::Periodic { period, .. } = child {
                        if let Some(p) = pi.next() {
                            *period = p;
                        }
                    }
                }
            }
        }
        Ok(spec)
    }

    /// Leaf components in tree order.
    pub(crate) fn components(&self) -> ComponentsIter<'_> {
        ComponentsIter {
            spec: self,
            idx: 0,
        }
    }
}

/// Flattened view of one leaf component.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Component<'a> {
    Se {
        lengthscale: f64,
        active_dims: &'a [usize],
    },
    Periodic {
        lengthscale: f64,
        period: &'a f64,
        active_dim: usize,
    },
}

impl Component<'_> {
    fn lengthscale(&self) -> f64 {
        match self {
            Component::Se { lengthscale, .. } | Component::Periodic { lengthscale, .. } => {
                *lengthscale
            }
        }
    }

    fn kind_str(&self) -> &'static str {
        match self {
            Component::Se { .. } => "se",
            Component::Periodic { .. } => "periodic",
        }
    }
}

pub(crate) struct ComponentsIter<'a> {
    spec: &'a KernelSpec,
    idx: usize,
}

impl<'a> Iterator for ComponentsIter<'a> {
    type Item = Component<'a>;

    fn next(&mut self) -> Option<Component<'a>> {
        let leaf = |s: &'a KernelSpec| -> Component<'a> {
            match s {
                KernelSpec::SquaredExponential {
                    lengthscale,
                    active_dims,
                    ..
                } => Component::Se {
                    lengthscale: *lengthscale,
                    active_dims,
                },
                KernelSpec::Periodic {
                    lengthscale,
                    period,
                    active_dims,
                    ..
                } => Component::Periodic {
                    lengthscale: *lengthscale,
                    period,
                    active_dim: active_dims[0],
                },
                KernelSpec::Product { .. } => unreachable!(),
            }
        };
        match self.spec {
            KernelSpec::Product { children, .. } => {
                let c = children.get(self.idx)?;
                self.idx += 1;
                Some(leaf(c))
            }
            s => {
                if self.idx == 0 {
                    self.idx = 1;
                    Some(leaf(s))
                } else {
                    None
                }
            }
        }
    }
}

fn check_finite(name: &str, xs: ArrayView1<f64>) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} contains non-finite values")));
    }
    Ok(())
}

fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>, dims: &[usize]) -> f64 {
    dims.iter()
        .map(|&d| {
            let diff = x[d] - y[d];
            diff * diff
        })
        .sum()
}

/// Squared exponential covariance between two points.
pub fn eval_se(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    lengthscale: f64,
    variance: f64,
    active_dims: &[usize],
) -> Result<f64> {
    if !(lengthscale.is_finite() && lengthscale > 0.0) || !(variance.is_finite() && variance > 0.0)
    {
        return Err(Error::invalid("lengthscale and variance must be positive"));
    }
    check_finite("x", x)?;
    check_finite("x'", y)?;
    let sq = sq_dist(x, y, active_dims);
    Ok(variance * (-sq / (2.0 * lengthscale * lengthscale)).exp())
}

/// Periodic covariance between two points over a single active dimension.
pub fn eval_periodic(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    lengthscale: f64,
    period: f64,
    variance: f64,
    active_dims: &[usize],
) -> Result<f64> {
    if active_dims.len() != 1 {
        return Err(Error::invalid(
            "the periodic kernel reads exactly one active dimension",
        ));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0)
        || !(period.is_finite() && period > 0.0)
        || !(variance.is_finite() && variance > 0.0)
    {
        return Err(Error::invalid(
            "lengthscale, period and variance must be positive",
        ));
    }
    check_finite("x", x)?;
    check_finite("x'", y)?;
    let d = (x[active_dims[0]] - y[active_dims[0]]).abs();
    let s = (std::f64::consts::PI * d / period).sin();
    Ok(variance * (-2.0 * s * s / (lengthscale * lengthscale)).exp())
}

fn component_value(c: &Component, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    match c {
        Component::Se {
            lengthscale,
            active_dims,
        } => {
            let sq = sq_dist(x, y, active_dims);
            (-sq / (2.0 * lengthscale * lengthscale)).exp()
        }
        Component::Periodic {
            lengthscale,
            period,
            active_dim,
        } => {
            let d = (x[*active_dim] - y[*active_dim]).abs();
            let s = (std::f64::consts::PI * d / **period).sin();
            (-2.0 * s * s / (lengthscale * lengthscale)).exp()
        }
    }
}

/// Evaluate a full kernel between two points.
pub fn eval_kernel(spec: &KernelSpec, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let dim = x.len().max(y.len());
    spec.validate(dim)?;
    check_finite("x", x)?;
    check_finite("x'", y)?;
    Ok(eval_kernel_unchecked(spec, x, y))
}

pub(crate) fn eval_kernel_unchecked(
    spec: &KernelSpec,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    spec.variance()
        * spec
            .components()
            .map(|c| component_value(&c, x, y))
            .product::<f64>()
}

/// Dense covariance matrix between two input sets.
pub fn covariance_matrix(
    spec: &KernelSpec,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::invalid(format!(
            "input dimensionality mismatch: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    spec.validate(x.ncols())?;
    let n = x.nrows();
    let m = y.nrows();
    let mut k = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            k[[i, j]] = eval_kernel_unchecked(spec, x.row(i), y.row(j));
        }
    }
    Ok(k)
}

/// Elementwise partial derivatives of the training Gram matrix with respect
/// to each kernel hyperparameter, in canonical parameter order.
pub fn kernel_gradients(spec: &KernelSpec, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    spec.validate(x.ncols())?;
    let n = x.nrows();
    let comps: Vec<Component> = spec.components().collect();
    let variance = spec.variance();

    let n_params = spec.param_count();
    let mut grads: Vec<Array2<f64>> = (0..n_params).map(|_| Array2::zeros((n, n))).collect();

    // parameter layout: [variance, l_0..l_{C-1}, periods in tree order]
    let period_slot: Vec<Option<usize>> = {
        let mut next = 1 + comps.len();
        comps
            .iter()
            .map(|c| {
                if matches!(c, Component::Periodic { .. }) {
                    let s = next;
                    next += 1;
                    Some(s)
                } else {
                    None
                }
            })
            .collect()
    };

    let mut vals = vec![0.0f64; comps.len()];
    for i in 0..n {
        for j in 0..=i {
            let xi = x.row(i);
            let xj = x.row(j);
            for (c, v) in comps.iter().zip(vals.iter_mut()) {
                *v = component_value(c, xi, xj);
            }
            let unit: f64 = vals.iter().product();
            let k_ij = variance * unit;

            grads[0][[i, j]] = unit; // dK/d(variance)
            grads[0][[j, i]] = unit;

            for (ci, comp) in comps.iter().enumerate() {
                // d(component)/d(theta) / component, multiplied back by k_ij
                match comp {
                    Component::Se {
                        lengthscale,
                        active_dims,
                    } => {
                        let sq = sq_dist(xi, xj, active_dims);
                        let g = k_ij * sq / lengthscale.powi(3);
                        grads[1 + ci][[i, j]] = g;
                        grads[1 + ci][[j, i]] = g;
                    }
                    Component::Periodic {
                        lengthscale,
                        period,
                        active_dim,
                    } => {
                        let d = (xi[*active_dim] - xj[*active_dim]).abs();
                        let u = std::f64::consts::PI * d / **period;
                        let s = u.sin();
                        let l2 = lengthscale * lengthscale;
                        let gl = k_ij * 4.0 * s * s / (l2 * lengthscale);
                        grads[1 + ci][[i, j]] = gl;
                        grads[1 + ci][[j, i]] = gl;
                        let gp = k_ij * 2.0 * std::f64::consts::PI * d * (2.0 * u).sin()
                            / (l2 * period.powi(2));
                        let slot = period_slot[ci].expect("periodic component has a period slot");
                        grads[slot][[i, j]] = gp;
                        grads[slot][[j, i]] = gp;
                    }
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_diff;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn grey_spec() -> KernelSpec {
        KernelSpec::product(
            1.3,
            vec![
                KernelSpec::se(0.8, 1.0, vec![0, 1]),
                KernelSpec::periodic(0.6, 1.1, 1.0, vec![0]),
            ],
        )
    }

    #[test]
    fn se_zero_distance_returns_variance() {
        let x = arr1(&[0.4, -2.0]);
        let v = eval_se(x.view(), x.view(), 3.0, 2.5, &[0, 1]).unwrap();
        assert_relative_eq!(v, 2.5, max_relative = 1e-15);
    }

    #[test]
    fn se_unit_distance_frozen_value() {
        let x = arr1(&[0.0]);
        let y = arr1(&[1.0]);
        let v = eval_se(x.view(), y.view(), 1.0, 1.0, &[0]).unwrap();
        assert_relative_eq!(v, 0.6065306597126334, max_relative = 1e-12);
        let y2 = arr1(&[2.0]);
        let v2 = eval_se(x.view(), y2.view(), 1.0, 1.0, &[0]).unwrap();
        assert_relative_eq!(v2, 0.1353352832366127, max_relative = 1e-12);
    }

    #[test]
    fn se_rejects_non_finite_and_bad_params() {
        let x = arr1(&[f64::NAN]);
        let y = arr1(&[0.0]);
        assert!(eval_se(x.view(), y.view(), 1.0, 1.0, &[0]).is_err());
        assert!(eval_se(y.view(), y.view(), -1.0, 1.0, &[0]).is_err());
        assert!(eval_se(y.view(), y.view(), 1.0, 0.0, &[0]).is_err());
    }

    #[test]
    fn periodic_at_full_period_returns_variance() {
        for p in [0.3, 1.0, 4.7] {
            let x = arr1(&[0.2]);
            let y = arr1(&[0.2 + p]);
            let v = eval_periodic(x.view(), y.view(), 0.9, p, 1.7, &[0]).unwrap();
            assert_relative_eq!(v, 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn periodic_half_period_frozen_value() {
        let x = arr1(&[0.0]);
        let y = arr1(&[0.5]);
        let v = eval_periodic(x.view(), y.view(), 1.0, 1.0, 1.0, &[0]).unwrap();
        assert_relative_eq!(v, 0.1353352832366127, max_relative = 1e-12);
    }

    #[test]
    fn periodic_rejects_multiple_active_dims() {
        let x = arr1(&[0.0, 1.0]);
        assert!(matches!(
            eval_periodic(x.view(), x.view(), 1.0, 1.0, 1.0, &[0, 1]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn product_multiplies_children_under_one_variance() {
        let x = arr1(&[0.0, 0.0]);
        let spec = grey_spec();
        let v = eval_kernel(&spec, x.view(), x.view()).unwrap();
        assert_relative_eq!(v, 1.3, max_relative = 1e-15);

        // shifting by one period in dim 0 leaves only the SE factor
        let y = arr1(&[1.1, 0.0]);
        let got = eval_kernel(&spec, x.view(), y.view()).unwrap();
        let se_only = eval_se(x.view(), y.view(), 0.8, 1.3, &[0, 1]).unwrap();
        assert_relative_eq!(got, se_only, max_relative = 1e-12);
    }

    #[test]
    fn product_requires_unit_variance_children() {
        let bad = KernelSpec::product(
            1.0,
            vec![
                KernelSpec::se(1.0, 2.0, vec![0]),
                KernelSpec::periodic(1.0, 1.0, 1.0, vec![0]),
            ],
        );
        assert!(bad.validate(1).is_err());

        let single = KernelSpec::product(1.0, vec![KernelSpec::se(1.0, 1.0, vec![0])]);
        assert!(single.validates_err("needs at least two children"));
    }

    impl KernelSpec {
        fn validates_err(&self, needle: &str) -> bool {
            match self.validate(2) {
                Err(Error::InvalidArgument(msg)) => msg.contains(needle),
                _ => false,
            }
        }
    }

    #[test]
    fn covariance_matrix_shapes_and_identical_points() {
        let spec = KernelSpec::se(1.0, 1.0, vec![0, 1]);
        let x = arr2(&[[0.5, 0.5]]);
        let k = covariance_matrix(&spec, x.view(), x.view()).unwrap();
        assert_eq!(k.shape(), &[1, 1]);
        assert_relative_eq!(
            k[[0, 0]],
            eval_kernel(&spec, x.row(0), x.row(0)).unwrap(),
            max_relative = 1e-15
        );

        let same = arr2(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        let k = covariance_matrix(&spec, same.view(), same.view()).unwrap();
        for v in k.iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn covariance_matrix_rejects_dim_mismatch() {
        let spec = KernelSpec::se(1.0, 1.0, vec![0]);
        let x = arr2(&[[0.0, 1.0]]);
        let y = arr2(&[[0.0]]);
        assert!(covariance_matrix(&spec, x.view(), y.view()).is_err());
    }

    #[test]
    fn variance_gradient_is_kernel_over_variance() {
        let spec = grey_spec();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-2.0..2.0));
        let k = covariance_matrix(&spec, x.view(), x.view()).unwrap();
        let grads = kernel_gradients(&spec, x.view()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(
                    grads[0][[i, j]],
                    k[[i, j]] / spec.variance(),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn se_lengthscale_gradient_frozen_value() {
        let spec = KernelSpec::se(1.0, 1.0, vec![0]);
        let x = arr2(&[[0.0], [1.0]]);
        let grads = kernel_gradients(&spec, x.view()).unwrap();
        // dk/dl at |x - x'| = 1, l = 1: exp(-0.5) * d^2 / l^3
        assert_relative_eq!(grads[1][[0, 1]], 0.6065306597126334, max_relative = 1e-12);
    }

    #[test]
    fn periodic_period_gradient_vanishes_at_full_period() {
        let spec = KernelSpec::periodic(0.7, 0.9, 1.0, vec![0]);
        let x = arr2(&[[0.0], [0.9]]);
        let grads = kernel_gradients(&spec, x.view()).unwrap();
        // params: [variance, lengthscale, period]
        assert!(grads[2][[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for spec in [
            KernelSpec::se(0.9, 1.4, vec![0, 1]),
            KernelSpec::periodic(0.8, 1.3, 0.7, vec![1]),
            grey_spec(),
        ] {
            let x = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.5..1.5));
            let grads = kernel_gradients(&spec, x.view()).unwrap();
            let params = spec.params();
            for (pi, _) in params.iter().enumerate() {
                for i in 0..x.nrows() {
                    for j in 0..x.nrows() {
                        let fd = central_diff(params[pi], 1e-6, |v| {
                            let mut p = params.clone();
                            p[pi] = v;
                            let s = spec.with_params(&p).unwrap();
                            eval_kernel_unchecked(&s, x.row(i), x.row(j))
                        });
                        let a = grads[pi][[i, j]];
                        let denom = fd.abs().max(1e-6);
                        assert!(
                            (a - fd).abs() / denom < 1e-5,
                            "param {pi} entry ({i},{j}): analytic {a} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn params_roundtrip_and_names() {
        let spec = grey_spec();
        assert_eq!(spec.params(), vec![1.3, 0.8, 0.6, 1.1]);
        assert_eq!(
            spec.param_names(),
            vec!["variance", "se_lengthscale", "periodic_lengthscale", "periodic_period"]
        );
        let rebuilt = spec.with_params(&[2.0, 0.5, 0.4, 0.9]).unwrap();
        assert_eq!(rebuilt.params(), vec![2.0, 0.5, 0.4, 0.9]);

        let black = KernelSpec::se(1.0, 1.0, vec![0, 1]);
        assert_eq!(black.param_names(), vec!["variance", "lengthscale"]);
    }

    #[test]
    fn spec_serializes_with_documented_keys() {
        let spec = grey_spec();
        let text = toml::to_string(&spec).unwrap();
        for key in ["kind", "lengthscale", "variance", "period", "active_dims", "children"] {
            assert!(text.contains(key), "missing key {key} in: {text}");
        }
        let back: KernelSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn psd_with_jitter_across_families() {
        use crate::linalg::{factorize_lower, SymMatrix};
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let families = [
            KernelSpec::se(0.5, 1.2, vec![0, 1]),
            KernelSpec::periodic(0.6, 0.8, 0.9, vec![0]),
            grey_spec(),
        ];
        for spec in &families {
            for _ in 0..100 {
                let n = rng.gen_range(2..=50);
                let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-3.0..3.0));
                let k = covariance_matrix(spec, x.view(), x.view()).unwrap();
                let max_diag = (0..n).map(|i| k[[i, i]]).fold(f64::MIN, f64::max);
                let mut a = SymMatrix::zeros(n);
                for j in 0..n {
                    for i in j..n {
                        a.set_lower(i, j, k[[i, j]] + if i == j { 1e-6 * max_diag } else { 0.0 });
                    }
                }
                assert!(factorize_lower(&mut a).is_ok());
            }
        }
    }

    proptest! {
        #[test]
        fn symmetry_is_exact(
            x0 in -3.0f64..3.0, x1 in -3.0f64..3.0,
            y0 in -3.0f64..3.0, y1 in -3.0f64..3.0,
            l in 0.3f64..5.0, p in 0.1f64..5.0,
        ) {
            let spec = KernelSpec::product(1.7, vec![
                KernelSpec::se(l, 1.0, vec![0, 1]),
                KernelSpec::periodic(l, p, 1.0, vec![0]),
            ]);
            let a = arr1(&[x0, x1]);
            let b = arr1(&[y0, y1]);
            let kab = eval_kernel(&spec, a.view(), b.view()).unwrap();
            let kba = eval_kernel(&spec, b.view(), a.view()).unwrap();
            prop_assert_eq!(kab, kba);
            // bounded by the variance, strictly positive
            prop_assert!(kab > 0.0 && kab <= 1.7 + 1e-15);
        }

        #[test]
        fn periodic_shift_invariance(
            d in 0.0f64..3.0, p in 0.2f64..2.0, shifts in 1u32..=10,
        ) {
            let x = arr1(&[0.0]);
            let y = arr1(&[d]);
            let y_shifted = arr1(&[d + shifts as f64 * p]);
            let base = eval_periodic(x.view(), y.view(), 0.9, p, 1.0, &[0]).unwrap();
            let moved = eval_periodic(x.view(), y_shifted.view(), 0.9, p, 1.0, &[0]).unwrap();
            prop_assert!((base - moved).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }
}
