//! Observed `(state, action, outcome)` triples and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{OpeError, Result};
use crate::instance::{Action, ActionSpace, ProblemInstance, NORMALIZATION_TOL};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub x: f64,
    pub a: Action,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub triples: Vec<Triple>,
    pub seed: u64,
    pub instance_id: String,
}

impl Dataset {
    pub fn new(triples: Vec<Triple>, seed: u64, instance_id: impl Into<String>) -> Result<Self> {
        if triples.is_empty() {
            return Err(OpeError::invalid("dataset must contain at least one triple"));
        }
        Ok(Self { triples, seed, instance_id: instance_id.into() })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Every action must belong to `actions`.
    pub fn check_actions(&self, actions: &ActionSpace) -> Result<()> {
        match self.triples.iter().find(|t| t.a >= actions.len()) {
            Some(t) => Err(OpeError::invalid(format!("action {} is not in the action space", t.a))),
            None => Ok(()),
        }
    }

    /// CSV with columns `x,a,y` preceded by a `#` comment line carrying the
    /// seed and instance id.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.triples.len() * 32);
        let _ = writeln!(out, "# seed={} instance_id={}", self.seed, self.instance_id);
        out.push_str("x,a,y\n");
        for t in &self.triples {
            let _ = writeln!(out, "{},{},{}", t.x, t.a, t.y);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut seed = 0u64;
        let mut instance_id = String::new();
        let mut triples = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split_whitespace() {
                    if let Some(v) = field.strip_prefix("seed=") {
                        seed = v.parse().map_err(|_| OpeError::Parse(format!("bad seed {v:?}")))?;
                    } else if let Some(v) = field.strip_prefix("instance_id=") {
                        instance_id = v.to_string();
                    }
                }
                continue;
            }
            if !saw_header {
                if line.replace(' ', "") != "x,a,y" {
                    return Err(OpeError::Parse(format!("expected header x,a,y, found {line:?}")));
                }
                saw_header = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(OpeError::Parse(format!("line {}: expected 3 fields", lineno + 1)));
            }
            let bad = |f: &str| OpeError::Parse(format!("line {}: cannot parse {f:?}", lineno + 1));
            triples.push(Triple {
                x: parts[0].parse().map_err(|_| bad(parts[0]))?,
                a: parts[1].parse().map_err(|_| bad(parts[1]))?,
                y: parts[2].parse().map_err(|_| bad(parts[2]))?,
            });
        }
        Dataset::new(triples, seed, instance_id)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| OpeError::Io { path: path.display().to_string(), source })?;
        Self::from_csv(&text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| OpeError::Io { path: path.display().to_string(), source })
    }
}

/// Draw `n` i.i.d. triples: `X ~ ξ`, `A ~ λ(·)π(X, ·)`, `Y = μ*(X, A) + σ(X, A) Z`.
///
/// Uses substream 0 of `seed`; the draw order per triple is state uniform,
/// action uniform, then one standard normal.
pub fn sample_dataset(instance: &ProblemInstance, n: usize, seed: u64) -> Result<Dataset> {
    sample_with_stream(instance, n, seed, 0)
}

/// As [`sample_dataset`] but reading substream `stream` of `seed`.
pub fn sample_with_stream(instance: &ProblemInstance, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(OpeError::invalid("sample size must be positive"));
    }
    let mut rng = rng::substream(seed, stream);
    let design = instance.design();
    let actions = design.actions();
    let k = actions.len();
    let mut cdf = vec![0.0; k];
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let x = instance.states().draw(rng.random::<f64>());
        let mut acc = 0.0;
        for (a, c) in cdf.iter_mut().enumerate() {
            acc += actions.weight(a) * design.propensity(x, a);
            *c = acc;
        }
        if (acc - 1.0).abs() > NORMALIZATION_TOL || !acc.is_finite() {
            return Err(OpeError::NonNormalizedPropensity { state: x, sum: acc });
        }
        let u: f64 = rng.random::<f64>() * acc;
        let a = cdf.iter().position(|&c| u < c).unwrap_or(k - 1);
        let z: f64 = rng.sample(StandardNormal);
        let y = instance.mu(x, a) + instance.sigma(x, a) * z;
        triples.push(Triple { x, a, y });
    }
    Dataset::new(triples, seed, instance.id())
}
