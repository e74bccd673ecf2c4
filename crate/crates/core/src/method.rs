//! Method strings: `MAP | DE(N) | Lin(N) | ALC(N,m) | FLC(N,m)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::curve::{CurveConfig, CurveMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Single adapter; a one-point free curve.
    Map,
    /// Ensemble of `N` independently trained adapters.
    DeepEnsemble(usize),
    /// Piecewise-linear path through `N` anchors; same as `ALC(N,0)`.
    Linear(usize),
    Anchored { anchors: usize, handles: usize },
    Free { anchors: usize, handles: usize },
}

impl Method {
    pub fn curve_config(&self) -> Result<CurveConfig> {
        let (n, m) = match *self {
            Method::Map => (1, 0),
            Method::DeepEnsemble(n) | Method::Linear(n) => (n, 0),
            Method::Anchored { anchors, handles } | Method::Free { anchors, handles } => (anchors, handles),
        };
        CurveConfig::new(n, m)
    }

    pub fn mode(&self) -> CurveMode {
        match self {
            Method::Map | Method::Free { .. } => CurveMode::Free,
            _ => CurveMode::Anchored,
        }
    }

    /// Number of pretrained anchors the method consumes.
    pub fn anchors_needed(&self) -> usize {
        match *self {
            Method::Map | Method::Free { .. } => 0,
            Method::DeepEnsemble(n) | Method::Linear(n) => n,
            Method::Anchored { anchors, .. } => anchors,
        }
    }

    /// Whether any control point is left for curve training.
    pub fn is_trainable(&self) -> bool {
        match *self {
            Method::Map | Method::Free { .. } => true,
            Method::DeepEnsemble(_) | Method::Linear(_) => false,
            Method::Anchored { handles, anchors } => handles > 0 && anchors > 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Map => f.write_str("MAP"),
            Method::DeepEnsemble(n) => write!(f, "DE({n})"),
            Method::Linear(n) => write!(f, "Lin({n})"),
            Method::Anchored { anchors, handles } => write!(f, "ALC({anchors},{handles})"),
            Method::Free { anchors, handles } => write!(f, "FLC({anchors},{handles})"),
        }
    }
}

fn parse_args(s: &str, count: usize) -> Result<Vec<usize>> {
    let bad = || Error::config(format!("bad method arguments {s:?}"));
    let args: Vec<i64> = s
        .split(',')
        .map(|a| a.trim().parse::<i64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if args.len() != count {
        return Err(bad());
    }
    if args[0] < 1 {
        return Err(Error::config(format!("number of anchors must be at least 1, got {}", args[0])));
    }
    if args.iter().skip(1).any(|&m| m < 0) {
        return Err(Error::config("number of handles must be non-negative"));
    }
    Ok(args.into_iter().map(|a| a as usize).collect())
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "MAP" {
            return Ok(Method::Map);
        }
        let open = s
            .find('(')
            .filter(|_| s.ends_with(')'))
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))?;
        let (name, inner) = (&s[..open], &s[open + 1..s.len() - 1]);
        let method = match name {
            "DE" => Method::DeepEnsemble(parse_args(inner, 1)?[0]),
            "Lin" => Method::Linear(parse_args(inner, 1)?[0]),
            "ALC" | "FLC" => {
                let a = parse_args(inner, 2)?;
                if name == "ALC" {
                    Method::Anchored { anchors: a[0], handles: a[1] }
                } else {
                    Method::Free { anchors: a[0], handles: a[1] }
                }
            }
            _ => return Err(Error::config(format!("unknown method {s:?}"))),
        };
        method.curve_config()?;
        Ok(method)
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
