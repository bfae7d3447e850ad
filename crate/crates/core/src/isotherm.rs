//! Parametric adsorption isotherms.
//!
//! An isotherm maps the mobile-phase concentration vector `c` (length `m`) to the
//! adsorbed quantity `H(c)`. Four families are supported:
//!
//! | family              | parameters                         | count     |
//! |---------------------|------------------------------------|-----------|
//! | Langmuir            | `K_1..K_m`, `N*`                   | `m + 1`   |
//! | Bi-Langmuir         | `K_{i,s}`, `N*_s`, `s = 1, 2`      | `2(m+1)`  |
//! | Lattice (`m = 1`)   | `K`, `N*`, `E_2..E_d`              | `d + 1`   |
//! | modified Langmuir   | `K_1..K_m`, `N*_1..N*_m`           | `2m`      |
//!
//! The single-component lattice of degree `d` uses the partition function
//! `Z(x) = sum_i a_i x^i` with `x = K c`, `a_0 = 1`, `a_1 = d` and
//! `a_i = binom(d, i) exp(-E_i / RT)`, giving
//! `H(c) = N* / (2d) * (sum_i i a_i x^i) / Z(x)`.
//! With all energies zero this is exactly half the Langmuir isotherm with the
//! same `K` and `N*`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314462618;

/// Temperature used for lattice isotherms when none is configured, in Kelvin.
pub const DEFAULT_TEMPERATURE: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IsothermError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Langmuir,
    BiLangmuir,
    LatticeSingle,
    ModifiedLangmuir,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Langmuir => "langmuir",
            Family::BiLangmuir => "bi_langmuir",
            Family::LatticeSingle => "lattice_single",
            Family::ModifiedLangmuir => "modified_langmuir",
        }
    }
}

/// Role of one entry of a packed parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Langmuir coefficient of `species` on adsorption `site` (site is 0 except for Bi-Langmuir).
    Affinity { species: usize, site: usize },
    /// Saturation coefficient; `index` is the site (Bi-Langmuir) or species (modified Langmuir).
    Saturation { index: usize },
    /// Lattice interaction energy for aggregates of `order` sites.
    Energy { order: usize },
}

/// Shape of a model without its values: what the optimizer searches over.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTemplate<T> {
    pub family: Family,
    pub species_count: usize,
    /// Lattice degree `d`; ignored by the other families.
    pub degree: usize,
    /// Lattice temperature in Kelvin; ignored by the other families.
    pub temperature: T,
}

impl<T: Scalar> ModelTemplate<T> {
    pub fn langmuir(species_count: usize) -> Self {
        Self::simple(Family::Langmuir, species_count)
    }

    pub fn bi_langmuir(species_count: usize) -> Self {
        Self::simple(Family::BiLangmuir, species_count)
    }

    pub fn modified_langmuir(species_count: usize) -> Self {
        Self::simple(Family::ModifiedLangmuir, species_count)
    }

    pub fn lattice(degree: usize, temperature: T) -> Self {
        Self {
            family: Family::LatticeSingle,
            species_count: 1,
            degree,
            temperature,
        }
    }

    fn simple(family: Family, species_count: usize) -> Self {
        Self {
            family,
            species_count,
            degree: 0,
            temperature: T::lit(DEFAULT_TEMPERATURE),
        }
    }

    pub fn validate(&self) -> Result<(), IsothermError> {
        if self.species_count == 0 {
            return Err(IsothermError::Template("species_count must be at least 1".into()));
        }
        if self.family == Family::LatticeSingle {
            if self.species_count != 1 {
                return Err(IsothermError::Template(
                    "lattice isotherm supports a single species only".into(),
                ));
            }
            if self.degree < 2 {
                return Err(IsothermError::Template("lattice degree must be at least 2".into()));
            }
            if !(self.temperature.is_finite() && self.temperature > T::zero()) {
                return Err(IsothermError::Template("temperature must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let m = self.species_count;
        match self.family {
            Family::Langmuir => m + 1,
            Family::BiLangmuir => 2 * (m + 1),
            Family::LatticeSingle => self.degree + 1,
            Family::ModifiedLangmuir => 2 * m,
        }
    }

    /// Role of each entry in the canonical packed order: all affinities
    /// (species order within each site, site 1 then site 2), then all saturation
    /// coefficients, then all energies.
    pub fn roles(&self) -> Vec<ParamRole> {
        let m = self.species_count;
        let mut roles = Vec::with_capacity(self.param_count());
        match self.family {
            Family::Langmuir => {
                roles.extend((0..m).map(|i| ParamRole::Affinity { species: i, site: 0 }));
                roles.push(ParamRole::Saturation { index: 0 });
            }
            Family::BiLangmuir => {
                for site in 0..2 {
                    roles.extend((0..m).map(|i| ParamRole::Affinity { species: i, site }));
                }
                roles.extend((0..2).map(|s| ParamRole::Saturation { index: s }));
            }
            Family::LatticeSingle => {
                roles.push(ParamRole::Affinity { species: 0, site: 0 });
                roles.push(ParamRole::Saturation { index: 0 });
                roles.extend((2..=self.degree).map(|order| ParamRole::Energy { order }));
            }
            Family::ModifiedLangmuir => {
                roles.extend((0..m).map(|i| ParamRole::Affinity { species: i, site: 0 }));
                roles.extend((0..m).map(|i| ParamRole::Saturation { index: i }));
            }
        }
        roles
    }

    /// Packed index of the saturation coefficient that multiplies the affinity at
    /// `index`, i.e. the partner used by the `K' = K N*` change of variable.
    pub fn saturation_partner(&self, index: usize) -> Option<usize> {
        let roles = self.roles();
        let ParamRole::Affinity { species, site } = *roles.get(index)? else {
            return None;
        };
        let wanted = match self.family {
            Family::ModifiedLangmuir => species,
            Family::BiLangmuir => site,
            _ => 0,
        };
        roles
            .iter()
            .position(|r| *r == ParamRole::Saturation { index: wanted })
    }

    /// Default parameter names in packed order (`K1`, `N*`, `E2`, ...).
    pub fn param_names(&self) -> Vec<String> {
        let bi = self.family == Family::BiLangmuir;
        let per_species_saturation = self.family == Family::ModifiedLangmuir;
        self.roles()
            .into_iter()
            .map(|role| match role {
                ParamRole::Affinity { species, site } if bi => format!("K{}_{}", species + 1, site + 1),
                ParamRole::Affinity { species, .. } => format!("K{}", species + 1),
                ParamRole::Saturation { index } if bi || per_species_saturation => {
                    format!("N*{}", index + 1)
                }
                ParamRole::Saturation { .. } => "N*".to_string(),
                ParamRole::Energy { order } => format!("E{order}"),
            })
            .collect()
    }

    /// Builds a model from a packed parameter vector. Positivity is not enforced.
    pub fn unpack(&self, theta: &[T]) -> Result<IsothermModel<T>, IsothermError> {
        self.validate()?;
        let n = self.param_count();
        if theta.len() != n {
            return Err(IsothermError::Shape {
                expected: n,
                got: theta.len(),
            });
        }
        let m = self.species_count;
        let model = match self.family {
            Family::Langmuir => IsothermModel::Langmuir {
                k: theta[..m].to_vec(),
                n_star: theta[m],
            },
            Family::BiLangmuir => IsothermModel::BiLangmuir {
                k1: theta[..m].to_vec(),
                k2: theta[m..2 * m].to_vec(),
                n_star1: theta[2 * m],
                n_star2: theta[2 * m + 1],
            },
            Family::LatticeSingle => IsothermModel::LatticeSingle {
                k: theta[0],
                n_star: theta[1],
                energies: theta[2..].to_vec(),
                temperature: self.temperature,
            },
            Family::ModifiedLangmuir => IsothermModel::ModifiedLangmuir {
                k: theta[..m].to_vec(),
                n_star: theta[m..].to_vec(),
            },
        };
        Ok(model)
    }
}

/// A concrete isotherm with parameter values.
#[derive(Debug, Clone, PartialEq)]
pub enum IsothermModel<T> {
    Langmuir {
        k: Vec<T>,
        n_star: T,
    },
    BiLangmuir {
        k1: Vec<T>,
        k2: Vec<T>,
        n_star1: T,
        n_star2: T,
    },
    /// Single-component lattice; `energies[i]` is the interaction energy (J/mol) of
    /// aggregates of `i + 2` sites, so the degree is `energies.len() + 1`.
    LatticeSingle {
        k: T,
        n_star: T,
        energies: Vec<T>,
        temperature: T,
    },
    ModifiedLangmuir {
        k: Vec<T>,
        n_star: Vec<T>,
    },
}

impl<T: Scalar> IsothermModel<T> {
    pub fn langmuir(k: Vec<T>, n_star: T) -> Self {
        IsothermModel::Langmuir { k, n_star }
    }

    pub fn family(&self) -> Family {
        match self {
            IsothermModel::Langmuir { .. } => Family::Langmuir,
            IsothermModel::BiLangmuir { .. } => Family::BiLangmuir,
            IsothermModel::LatticeSingle { .. } => Family::LatticeSingle,
            IsothermModel::ModifiedLangmuir { .. } => Family::ModifiedLangmuir,
        }
    }

    pub fn species_count(&self) -> usize {
        match self {
            IsothermModel::Langmuir { k, .. } => k.len(),
            IsothermModel::BiLangmuir { k1, .. } => k1.len(),
            IsothermModel::LatticeSingle { .. } => 1,
            IsothermModel::ModifiedLangmuir { k, .. } => k.len(),
        }
    }

    pub fn template(&self) -> ModelTemplate<T> {
        let m = self.species_count();
        match self {
            IsothermModel::LatticeSingle {
                energies,
                temperature,
                ..
            } => ModelTemplate::lattice(energies.len() + 1, *temperature),
            _ => ModelTemplate::simple(self.family(), m),
        }
    }

    /// Flattens the parameters in canonical order (see [`ModelTemplate::roles`]).
    pub fn pack(&self) -> Vec<T> {
        match self {
            IsothermModel::Langmuir { k, n_star } => {
                let mut v = k.clone();
                v.push(*n_star);
                v
            }
            IsothermModel::BiLangmuir {
                k1,
                k2,
                n_star1,
                n_star2,
            } => {
                let mut v = k1.clone();
                v.extend_from_slice(k2);
                v.push(*n_star1);
                v.push(*n_star2);
                v
            }
            IsothermModel::LatticeSingle {
                k,
                n_star,
                energies,
                ..
            } => {
                let mut v = vec![*k, *n_star];
                v.extend_from_slice(energies);
                v
            }
            IsothermModel::ModifiedLangmuir { k, n_star } => {
                let mut v = k.clone();
                v.extend_from_slice(n_star);
                v
            }
        }
    }

    /// Checks dimensions and strict positivity of every affinity and saturation coefficient.
    pub fn validate(&self) -> Result<(), IsothermError> {
        let positive = |x: &T| x.is_finite() && *x > T::zero();
        let ok = match self {
            IsothermModel::Langmuir { k, n_star } => {
                !k.is_empty() && k.iter().all(positive) && positive(n_star)
            }
            IsothermModel::BiLangmuir {
                k1,
                k2,
                n_star1,
                n_star2,
            } => {
                !k1.is_empty()
                    && k1.len() == k2.len()
                    && k1.iter().chain(k2).all(positive)
                    && positive(n_star1)
                    && positive(n_star2)
            }
            IsothermModel::LatticeSingle {
                k,
                n_star,
                energies,
                temperature,
            } => {
                positive(k)
                    && positive(n_star)
                    && !energies.is_empty()
                    && energies.iter().all(|e| e.is_finite())
                    && positive(temperature)
            }
            IsothermModel::ModifiedLangmuir { k, n_star } => {
                !k.is_empty()
                    && k.len() == n_star.len()
                    && k.iter().chain(n_star).all(positive)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(IsothermError::InvalidInput(format!(
                "{} parameters must be finite and strictly positive",
                self.family().as_str()
            )))
        }
    }

    fn check_input(&self, c: &[T]) -> Result<(), IsothermError> {
        let m = self.species_count();
        if c.len() != m {
            return Err(IsothermError::Shape {
                expected: m,
                got: c.len(),
            });
        }
        if let Some(i) = c.iter().position(|x| !x.is_finite()) {
            return Err(IsothermError::InvalidInput(format!(
                "concentration of species {} is not finite",
                i + 1
            )));
        }
        Ok(())
    }

    /// Adsorbed quantity `H(c)`. Negative entries of `c` are clamped to zero.
    pub fn eval(&self, c: &[T]) -> Result<Vec<T>, IsothermError> {
        self.check_input(c)?;
        let mut out = vec![T::zero(); c.len()];
        self.eval_into(c, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into `out`; negative concentrations are clamped to zero.
    /// `c` and `out` must both have length `species_count()`.
    #[inline]
    pub fn eval_into(&self, c: &[T], out: &mut [T]) {
        match self {
            IsothermModel::Langmuir { k, n_star } => {
                let denom = T::one() + dot_clamped(k, c);
                let scale = *n_star / denom;
                for ((o, &ki), &ci) in out.iter_mut().zip(k).zip(c) {
                    *o = scale * ki * clamp(ci);
                }
            }
            IsothermModel::BiLangmuir {
                k1,
                k2,
                n_star1,
                n_star2,
            } => {
                let s1 = *n_star1 / (T::one() + dot_clamped(k1, c));
                let s2 = *n_star2 / (T::one() + dot_clamped(k2, c));
                for i in 0..out.len() {
                    out[i] = (s1 * k1[i] + s2 * k2[i]) * clamp(c[i]);
                }
            }
            IsothermModel::LatticeSingle {
                k,
                n_star,
                energies,
                temperature,
            } => {
                out[0] = lattice_value(*k, *n_star, energies, *temperature, clamp(c[0]));
            }
            IsothermModel::ModifiedLangmuir { k, n_star } => {
                let inv = T::one() / (T::one() + dot_clamped(k, c));
                for i in 0..out.len() {
                    out[i] = n_star[i] * k[i] * clamp(c[i]) * inv;
                }
            }
        }
    }

    /// Jacobian `dH_i/dc_j` at `c` (clamped like [`eval`](Self::eval)).
    ///
    /// Closed form for the Langmuir-type families; central differences with step
    /// `max(s, s|c|)` (`s = 1e-6` in double precision) for the lattice.
    pub fn jacobian(&self, c: &[T]) -> Result<Jacobian<T>, IsothermError> {
        self.check_input(c)?;
        let m = c.len();
        let mut jac = Jacobian::zeros(m);
        self.jacobian_into(c, &mut jac);
        Ok(jac)
    }

    /// Unchecked version of [`jacobian`](Self::jacobian) writing into a preallocated matrix.
    pub fn jacobian_into(&self, c: &[T], jac: &mut Jacobian<T>) {
        let m = c.len();
        match self {
            IsothermModel::Langmuir { k, n_star } => {
                for i in 0..m {
                    langmuir_jacobian_row(*n_star, k, c, i, jac.row_mut(i), T::zero());
                }
            }
            IsothermModel::BiLangmuir {
                k1,
                k2,
                n_star1,
                n_star2,
            } => {
                for i in 0..m {
                    langmuir_jacobian_row(*n_star1, k1, c, i, jac.row_mut(i), T::zero());
                    langmuir_jacobian_row(*n_star2, k2, c, i, jac.row_mut(i), T::one());
                }
            }
            IsothermModel::ModifiedLangmuir { k, n_star } => {
                for (i, &n) in n_star.iter().enumerate().take(m) {
                    langmuir_jacobian_row(n, k, c, i, jac.row_mut(i), T::zero());
                }
            }
            IsothermModel::LatticeSingle {
                k,
                n_star,
                energies,
                temperature,
            } => {
                let x = clamp(c[0]);
                let s = fd_scale::<T>();
                let h = s.max(s * x.abs());
                // The lattice polynomial is smooth through zero, so the lower
                // stencil point is evaluated without clamping.
                let up = lattice_value(*k, *n_star, energies, *temperature, x + h);
                let down = lattice_value(*k, *n_star, energies, *temperature, x - h);
                jac.set(0, 0, (up - down) / (h + h));
            }
        }
    }
}

#[inline]
fn clamp<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        T::zero()
    } else {
        x
    }
}

#[inline]
fn dot_clamped<T: Scalar>(k: &[T], c: &[T]) -> T {
    k.iter()
        .zip(c)
        .fold(T::zero(), |acc, (&ki, &ci)| acc + ki * clamp(ci))
}

/// Adds `dH_i/dc_j` of one Langmuir site with saturation `n_star` into `row`.
/// `accumulate` is 0 to overwrite, 1 to add.
#[inline]
fn langmuir_jacobian_row<T: Scalar>(
    n_star: T,
    k: &[T],
    c: &[T],
    i: usize,
    row: &mut [T],
    accumulate: T,
) {
    let denom = T::one() + dot_clamped(k, c);
    let inv2 = T::one() / (denom * denom);
    let ci = clamp(c[i]);
    for (j, r) in row.iter_mut().enumerate() {
        let delta = if i == j { denom } else { T::zero() };
        *r = accumulate * *r + n_star * k[i] * (delta - ci * k[j]) * inv2;
    }
}

fn fd_scale<T: Scalar>() -> T {
    if T::epsilon() < T::lit(1e-10) {
        T::lit(1e-6)
    } else {
        T::epsilon().cbrt()
    }
}

fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    let k = k.min(n - k);
    (0..k).fold(T::one(), |acc, i| {
        acc * T::lit((n - i) as f64) / T::lit((i + 1) as f64)
    })
}

fn lattice_value<T: Scalar>(k: T, n_star: T, energies: &[T], temperature: T, c: T) -> T {
    let degree = energies.len() + 1;
    let x = k * c;
    let rt = T::lit(GAS_CONSTANT) * temperature;
    // i = 1 term: a_1 = d
    let d = T::lit(degree as f64);
    let mut z = T::one() + d * x;
    let mut weighted = d * x;
    let mut power = x;
    for (idx, &e) in energies.iter().enumerate() {
        let order = idx + 2;
        power = power * x;
        let a = binomial::<T>(degree, order) * (-e / rt).exp();
        z = z + a * power;
        weighted = weighted + T::lit(order as f64) * a * power;
    }
    n_star / (T::lit(2.0) * d) * weighted / z
}

/// A model with its per-call constants precomputed, for hot loops.
#[derive(Debug, Clone)]
pub struct PreparedIsotherm<'a, T> {
    model: &'a IsothermModel<T>,
    /// Lattice only: `N*/(2d)`, `K` and `a_0..a_d`.
    lattice: Option<(T, T, Vec<T>)>,
}

impl<'a, T: Scalar> PreparedIsotherm<'a, T> {
    pub fn new(model: &'a IsothermModel<T>) -> Self {
        let lattice = match model {
            IsothermModel::LatticeSingle {
                k,
                n_star,
                energies,
                temperature,
            } => {
                let degree = energies.len() + 1;
                let rt = T::lit(GAS_CONSTANT) * *temperature;
                let mut a = vec![T::one(), T::lit(degree as f64)];
                a.extend(energies.iter().enumerate().map(|(idx, &e)| {
                    binomial::<T>(degree, idx + 2) * (-e / rt).exp()
                }));
                Some((*n_star / (T::lit(2.0) * T::lit(degree as f64)), *k, a))
            }
            _ => None,
        };
        Self { model, lattice }
    }

    /// Same as [`IsothermModel::eval_into`].
    #[inline]
    pub fn eval_into(&self, c: &[T], out: &mut [T]) {
        match &self.lattice {
            Some((prefactor, k, a)) => {
                let x = *k * clamp(c[0]);
                let mut z = T::zero();
                let mut weighted = T::zero();
                for (i, &ai) in a.iter().enumerate().rev() {
                    z = z * x + ai;
                    weighted = weighted * x + T::lit(i as f64) * ai;
                }
                out[0] = *prefactor * weighted / z;
            }
            None => self.model.eval_into(c, out),
        }
    }
}

/// Dense square matrix in row-major order, used for isotherm and flux Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Jacobian<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }
}
