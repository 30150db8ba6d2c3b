//! Range specifications: `a:b:logN`, `a:b:linN`, or a comma-separated list.

use crate::error::CliError;

pub const MAX_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: String,
    pub values: Vec<f64>,
}

fn number(field: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{field}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::Usage(format!("{field}: `{s}` is not finite")));
    }
    Ok(v)
}

pub fn parse(field: &str, spec: &str) -> Result<Grid, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, kind] => {
            let (a, b) = (number(field, a)?, number(field, b)?);
            let (log, count) = if let Some(n) = kind.strip_prefix("log") {
                (true, n)
            } else if let Some(n) = kind.strip_prefix("lin") {
                (false, n)
            } else {
                return Err(CliError::Usage(format!("{field}: grid kind must be logN or linN, got `{kind}`")));
            };
            let n: usize = count
                .parse()
                .map_err(|_| CliError::Usage(format!("{field}: bad point count `{count}`")))?;
            if n == 0 || n > MAX_POINTS {
                return Err(CliError::Usage(format!("{field}: point count must be in 1..={MAX_POINTS}, got {n}")));
            }
            if log && !(a > 0.0 && b > 0.0) {
                return Err(CliError::Usage(format!("{field}: log grids need positive ends")));
            }
            let t = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            (0..n)
                .map(|i| {
                    if n > 1 && i == n - 1 {
                        b
                    } else if log {
                        a * (b / a).powf(t(i))
                    } else {
                        a + t(i) * (b - a)
                    }
                })
                .collect()
        }
        [list] => {
            let values = list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| number(field, s))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() || values.len() > MAX_POINTS {
                return Err(CliError::Usage(format!("{field}: need 1..={MAX_POINTS} values")));
            }
            values
        }
        _ => return Err(CliError::Usage(format!("{field}: cannot parse range `{spec}`"))),
    };
    Ok(Grid {
        spec: spec.to_string(),
        values,
    })
}
