use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clipped linear schedule `x -> y | a -> b`: `x` up to epoch `a`, `y` from epoch `b` on,
/// linear in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScheduleSpec {
    pub x: f64,
    pub y: f64,
    pub a: usize,
    pub b: usize,
}

impl ScheduleSpec {
    pub fn new(x: f64, y: f64, a: usize, b: usize) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Config(format!("schedule endpoints {x} and {y} must be finite")));
        }
        if a >= b {
            return Err(Error::Config(format!("schedule epochs need a < b, got {a} -> {b}")));
        }
        Ok(Self { x, y, a, b })
    }

    pub fn constant(v: f64) -> Self {
        Self { x: v, y: v, a: 0, b: 1 }
    }

    /// `clip(x + (e - a)/(b - a) (y - x), min(x, y), max(x, y))`.
    pub fn value(&self, epoch: usize) -> f64 {
        let t = (epoch as f64 - self.a as f64) / (self.b - self.a) as f64;
        let v = self.x + t * (self.y - self.x);
        v.clamp(self.x.min(self.y), self.x.max(self.y))
    }

    /// Floored value for rollout lengths.
    pub fn length(&self, epoch: usize) -> usize {
        self.value(epoch).floor().max(0.0) as usize
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.x == self.y {
            write!(f, "{}", self.x)
        } else {
            write!(f, "{}->{}|{}->{}", self.x, self.y, self.a, self.b)
        }
    }
}

fn pair<T: FromStr>(s: &str, what: &str) -> Result<(T, T)> {
    let bad = || Error::Config(format!("bad schedule {what} '{s}', expected 'from->to'"));
    let (l, r) = s.split_once("->").ok_or_else(bad)?;
    Ok((l.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?))
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    /// Accepts `v` (constant) or `x->y|a->b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once('|') {
            None => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad schedule '{s}', expected 'v' or 'x->y|a->b'")))?;
                if !v.is_finite() {
                    return Err(Error::Config(format!("schedule value {v} must be finite")));
                }
                Ok(Self::constant(v))
            }
            Some((values, epochs)) => {
                let (x, y) = pair::<f64>(values, "values")?;
                let (a, b) = pair::<usize>(epochs, "epochs")?;
                Self::new(x, y, a, b)
            }
        }
    }
}

impl TryFrom<String> for ScheduleSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScheduleSpec> for String {
    fn from(s: ScheduleSpec) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let s: ScheduleSpec = "1->10|20->150".parse().unwrap();
        assert_eq!(s, ScheduleSpec::new(1.0, 10.0, 20, 150).unwrap());
        assert_eq!(s.to_string().parse::<ScheduleSpec>().unwrap(), s);
        assert_eq!("3".parse::<ScheduleSpec>().unwrap().length(99), 3);
        assert!("1->2|5->5".parse::<ScheduleSpec>().is_err());
        assert!("1->2".parse::<ScheduleSpec>().is_err());
        assert!("a->2|1->3".parse::<ScheduleSpec>().is_err());
    }

    #[test]
    fn decreasing_schedule_stays_in_range() {
        let s = ScheduleSpec::new(5.0, 1.0, 1, 5).unwrap();
        assert_eq!(s.value(1), 5.0);
        assert_eq!(s.value(3), 3.0);
        assert_eq!(s.value(50), 1.0);
    }
}
