//! Offspring laws, generating functions and the survival decomposition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Tail mass left out when a named family is materialized as a table.
pub const TRUNCATION_MASS: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-12;
const FIXED_POINT_TOL: f64 = 1e-14;
const FIXED_POINT_MAX_ITERS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Explicit,
    Poisson { lambda: f64 },
    Geometric { alpha: f64 },
    Binomial { n: u32, p: f64 },
}

/// An offspring law `{p_k}`.
///
/// Named families keep their closed-form pgf; every family also carries a
/// materialized probability table used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    family: Family,
    weights: Vec<f64>,
    mean: f64,
}

impl OffspringDistribution {
    pub fn explicit(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight list".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {w} is not a probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}, not 1")));
        }
        let mut weights = weights;
        while weights.len() > 1 && *weights.last().unwrap() == 0.0 {
            weights.pop();
        }
        let mean = weights.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        Ok(Self { family: Family::Explicit, weights, mean })
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidDistribution(format!("poisson rate {lambda}")));
        }
        let mut weights = vec![(-lambda).exp()];
        let mut cum = weights[0];
        let mut k = 0usize;
        // The mode must be passed before the tail bound means anything.
        while cum < 1.0 - TRUNCATION_MASS || (k as f64) < lambda {
            k += 1;
            let next = weights[k - 1] * lambda / k as f64;
            weights.push(next);
            cum += next;
            if k > 100_000 {
                break;
            }
        }
        fold_remainder(&mut weights);
        Ok(Self { family: Family::Poisson { lambda }, weights, mean: lambda })
    }

    /// `p_k = alpha (1 - alpha)^k`, `k >= 0`.
    pub fn geometric(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidDistribution(format!("geometric parameter {alpha}")));
        }
        let mut weights = vec![alpha];
        let mut cum = alpha;
        while cum < 1.0 - TRUNCATION_MASS && weights.len() < 1_000_000 {
            let next = weights.last().unwrap() * (1.0 - alpha);
            weights.push(next);
            cum += next;
        }
        fold_remainder(&mut weights);
        Ok(Self { family: Family::Geometric { alpha }, weights, mean: (1.0 - alpha) / alpha })
    }

    pub fn binomial(n: u32, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!("binomial probability {p}")));
        }
        let weights: Vec<f64> = (0..=n)
            .map(|k| binomial_term(u64::from(n), u64::from(k), p))
            .collect();
        let mut weights = weights;
        fold_remainder(&mut weights);
        Ok(Self { family: Family::Binomial { n, p }, weights, mean: f64::from(n) * p })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Materialized probability table (index = number of children).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Largest number of children the materialized table can produce.
    pub fn max_children(&self) -> u32 {
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32
    }

    /// Generating function `f(z) = sum p_k z^k`; `+inf` when the series diverges.
    pub fn pgf(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return Err(Error::NegativeArgument(z));
        }
        Ok(match self.family {
            Family::Explicit => self.weights.iter().rev().fold(0.0, |acc, p| acc * z + p),
            Family::Poisson { lambda } => (lambda * (z - 1.0)).exp(),
            Family::Geometric { alpha } => {
                let denom = 1.0 - (1.0 - alpha) * z;
                if denom <= 0.0 {
                    f64::INFINITY
                } else {
                    alpha / denom
                }
            }
            Family::Binomial { n, p } => (1.0 - p + p * z).powi(n as i32),
        })
    }

    /// Smallest fixed point of the pgf on `[0, 1]`.
    pub fn extinction_probability(&self) -> f64 {
        if self.mean <= 1.0 {
            return 1.0;
        }
        let mut q = 0.0f64;
        for _ in 0..FIXED_POINT_MAX_ITERS {
            let next = self.pgf(q).expect("q stays in [0,1]");
            if (next - q).abs() < FIXED_POINT_TOL {
                return next;
            }
            q = next;
        }
        q
    }

    /// Splits the law into the extinction-conditioned law and the survival backbone.
    pub fn decompose(&self) -> Result<DecomposedLaw> {
        if self.mean <= 1.0 {
            return Err(Error::NotSupercritical { mean: self.mean });
        }
        let q = self.extinction_probability();
        let p = &self.weights;

        let tilde = if q > 0.0 {
            let w: Vec<f64> = p.iter().enumerate().map(|(k, pk)| pk * q.powi(k as i32 - 1)).collect();
            Some(Self::derived(w))
        } else {
            None
        };

        // Joint law of (surviving, extinct) children of a vertex with an infinite line of descent.
        let mut joint = Vec::new();
        let survive = 1.0 - q;
        for (j, &pj) in p.iter().enumerate().skip(1) {
            if pj == 0.0 {
                continue;
            }
            for k in 1..=j {
                let w = pj * thinning(j as u64, k as u64, survive) / survive;
                if w > 0.0 {
                    joint.push(((k as u32, (j - k) as u32), w));
                }
            }
        }
        let total: f64 = joint.iter().map(|(_, w)| w).sum();
        let max_k = joint.iter().map(|((k, _), _)| *k as usize).max().unwrap_or(1);
        let mut prime_w = vec![0.0; max_k + 1];
        for ((k, _), w) in &joint {
            prime_w[*k as usize] += w / total;
        }
        let prime = Self::derived(prime_w);
        let mut cdf = Vec::with_capacity(joint.len());
        let mut acc = 0.0;
        let mut pairs = Vec::with_capacity(joint.len());
        for (pair, w) in joint {
            acc += w / total;
            cdf.push(acc);
            pairs.push(pair);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        let tilde_table = tilde.as_ref().map(|t| DiscreteTable::new(t.weights()));
        let prime_min = prime.weights.iter().position(|&w| w > 0.0).unwrap_or(1) as u32;
        Ok(DecomposedLaw {
            base: self.clone(),
            q,
            tilde,
            prime,
            joint_pairs: pairs,
            joint_cdf: cdf,
            tilde_table,
            prime_min,
        })
    }

    fn derived(mut w: Vec<f64>) -> Self {
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        fold_remainder(&mut w);
        while w.len() > 1 && *w.last().unwrap() == 0.0 {
            w.pop();
        }
        let mean = w.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        Self { family: Family::Explicit, weights: w, mean }
    }
}

/// Drops atoms beyond the point where the retained mass reaches
/// `1 - TRUNCATION_MASS`, folding the remainder into the last retained atom.
fn fold_remainder(w: &mut Vec<f64>) {
    let mut cum = 0.0;
    let mut cut = w.len();
    for (k, x) in w.iter().enumerate() {
        cum += x;
        if cum >= 1.0 - TRUNCATION_MASS {
            cut = k + 1;
            break;
        }
    }
    w.truncate(cut.max(1));
    let kept: f64 = w.iter().sum();
    if let Some(last) = w.iter_mut().rev().find(|x| **x > 0.0) {
        *last += 1.0 - kept;
    }
}

fn binomial_term(n: u64, k: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// `C(j,k) s^k (1-s)^(j-k)`.
fn thinning(j: u64, k: u64, s: f64) -> f64 {
    binomial_term(j, k, s)
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Explicit => {
                let parts: Vec<String> = self.weights.iter().map(|w| format!("{w}")).collect();
                write!(f, "explicit:{}", parts.join(","))
            }
            Family::Poisson { lambda } => write!(f, "poisson:{lambda}"),
            Family::Geometric { alpha } => write!(f, "geometric:{alpha}"),
            Family::Binomial { n, p } => write!(f, "binomial:{n},{p}"),
        }
    }
}

impl FromStr for OffspringDistribution {
    type Err = Error;

    /// Parses `explicit:0.25,0,0.75`, `poisson:1.5`, `geometric:0.4`, `binomial:3,0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidDistribution(format!("{msg}: {s:?}"));
        let (tag, args) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let nums = |args: &str| -> Result<Vec<f64>> {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|_| bad("not a number")))
                .collect()
        };
        match tag.trim() {
            "explicit" => Self::explicit(nums(args)?),
            "poisson" => match nums(args)?.as_slice() {
                [l] => Self::poisson(*l),
                _ => Err(bad("poisson takes one parameter")),
            },
            "geometric" => match nums(args)?.as_slice() {
                [a] => Self::geometric(*a),
                _ => Err(bad("geometric takes one parameter")),
            },
            "binomial" => match nums(args)?.as_slice() {
                [n, p] if *n >= 0.0 && n.fract() == 0.0 => Self::binomial(*n as u32, *p),
                _ => Err(bad("binomial takes n,p with integer n")),
            },
            _ => Err(bad("unknown family")),
        }
    }
}

/// Inverse-CDF sampler over `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTable {
    cdf: Vec<f64>,
}

impl DiscreteTable {
    pub fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(pos) = cdf.iter().rposition(|_| true) {
            cdf[pos] = 1.0;
        }
        Self { cdf }
    }

    #[inline]
    pub fn sample(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// A supercritical law split at its extinction probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedLaw {
    base: OffspringDistribution,
    q: f64,
    tilde: Option<OffspringDistribution>,
    prime: OffspringDistribution,
    joint_pairs: Vec<(u32, u32)>,
    joint_cdf: Vec<f64>,
    tilde_table: Option<DiscreteTable>,
    prime_min: u32,
}

impl DecomposedLaw {
    pub fn base(&self) -> &OffspringDistribution {
        &self.base
    }

    /// Extinction probability.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Offspring law conditioned on extinction; `None` when extinction is impossible.
    pub fn tilde(&self) -> Option<&OffspringDistribution> {
        self.tilde.as_ref()
    }

    /// Offspring law of the backbone (vertices with an infinite line of descent).
    pub fn prime(&self) -> &OffspringDistribution {
        &self.prime
    }

    /// Smallest backbone offspring count with positive probability.
    pub fn prime_min(&self) -> u32 {
        self.prime_min
    }

    /// Largest offspring count any generated vertex can have.
    pub fn max_children(&self) -> u32 {
        self.base.max_children()
    }

    /// Probability that a backbone vertex has `k` surviving and `m` extinct children.
    pub fn joint_probability(&self, k: u32, m: u32) -> f64 {
        let mut prev = 0.0;
        for (pair, c) in self.joint_pairs.iter().zip(&self.joint_cdf) {
            if *pair == (k, m) {
                return c - prev;
            }
            prev = *c;
        }
        0.0
    }

    /// Samples `(surviving, extinct)` child counts of a backbone vertex.
    #[inline]
    pub fn sample_backbone(&self, u: f64) -> (u32, u32) {
        let i = self.joint_cdf.partition_point(|&c| c <= u).min(self.joint_cdf.len() - 1);
        self.joint_pairs[i]
    }

    /// Samples the child count of a vertex in a finite bush.
    #[inline]
    pub fn sample_bush(&self, u: f64) -> u32 {
        match &self.tilde_table {
            Some(t) => t.sample(u) as u32,
            None => 0,
        }
    }
}
