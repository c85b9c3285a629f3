//! Line-oriented CSV for estimates, comparisons and search histories.
//!
//! Each file starts with a `#` format line, then a header row. Reals are
//! written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly.
//!
//! ```text
//! estimates  : gamma_test,p_hat,std_err,rare_count,n,ess
//! comparison : gamma_test,rare_ratio,variance_ratio
//! history    : k,status,n,alpha,rho_quantile,gamma_k,rare_count,level_count,
//!              level_mass,weight_max,weight_min,ess,failures,theta_0..,d_0..
//! ```
//!
//! The history has one row per iteration plus a final `final` row for θ_K
//! whose statistics are empty; `theta_*` is the flattened iterate and `d_*`
//! the unnormalized level-set average (empty when the level set was empty).

use std::fmt::Write as _;

use super::{CeError, CeHistory, ComparisonRow, EstimateReport, Method};

pub const ESTIMATES_FORMAT: &str = "# raresim estimates v1";
pub const ESTIMATES_HEADER: &str = "gamma_test,p_hat,std_err,rare_count,n,ess";
pub const COMPARISON_FORMAT: &str = "# raresim comparison v1";
pub const COMPARISON_HEADER: &str = "gamma_test,rare_ratio,variance_ratio";
pub const HISTORY_FORMAT: &str = "# raresim ce-history v1";

/// 17 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn estimates_csv(reports: &[EstimateReport]) -> String {
    let mut out = format!("{ESTIMATES_FORMAT}\n{ESTIMATES_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            real(r.gamma_test),
            real(r.p_hat),
            real(r.std_err),
            r.rare_count,
            r.n,
            real(r.ess)
        );
    }
    out
}

fn data_lines<'a>(text: &'a str, format: &str, header: &str) -> Result<Vec<(usize, &'a str)>, CeError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l == format => {}
        _ => return Err(CeError::GridMismatch(format!("missing format line {format:?}"))),
    }
    match lines.next() {
        Some((_, l)) if l == header => {}
        _ => return Err(CeError::GridMismatch(format!("missing header {header:?}"))),
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()).collect())
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: Option<&str>) -> Result<T, CeError> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| CeError::GridMismatch(format!("line {line}: bad or missing {name}")))
}

/// Parses [`estimates_csv`] output; `method` labels the rows.
pub fn parse_estimates(text: &str, method: Method) -> Result<Vec<EstimateReport>, CeError> {
    data_lines(text, ESTIMATES_FORMAT, ESTIMATES_HEADER)?
        .into_iter()
        .map(|(line, l)| {
            let mut it = l.split(',');
            let report = EstimateReport {
                gamma_test: field(line, "gamma_test", it.next())?,
                p_hat: field(line, "p_hat", it.next())?,
                std_err: field(line, "std_err", it.next())?,
                rare_count: field(line, "rare_count", it.next())?,
                n: field(line, "n", it.next())?,
                ess: field(line, "ess", it.next())?,
                method,
            };
            if it.next().is_some() {
                return Err(CeError::GridMismatch(format!("line {line}: too many fields")));
            }
            Ok(report)
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_FORMAT}\n{COMPARISON_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", real(r.gamma_test), real(r.rare_ratio), real(r.variance_ratio));
    }
    out
}

/// Fixed-width table of a comparison, with the estimates it came from.
pub fn comparison_summary(ce: &[EstimateReport], naive: &[EstimateReport], rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>12} {:>24} {:>24} {:>10} {:>10} {:>11} {:>14}",
        "gamma_test", "p_hat (ce)", "p_hat (naive)", "rare (ce)", "rare (mc)", "rare ratio", "var ratio"
    );
    for ((c, b), r) in ce.iter().zip(naive).zip(rows) {
        let _ = writeln!(
            out,
            "{:>12.6} {:>24} {:>24} {:>10} {:>10} {:>11.3} {:>14.3}",
            r.gamma_test,
            format!("{:.4e} ± {:.2e}", c.p_hat, c.std_err),
            format!("{:.4e} ± {:.2e}", b.p_hat, b.std_err),
            c.rare_count,
            b.rare_count,
            r.rare_ratio,
            r.variance_ratio
        );
    }
    out
}

pub fn history_csv(history: &CeHistory) -> String {
    let n_theta = history.theta0.flatten().len();
    let n_d = history.iterations.iter().map(|r| r.d_vector.len()).max().unwrap_or(0);
    let mut out = format!("{HISTORY_FORMAT}\n");
    out.push_str(
        "k,status,n,alpha,rho_quantile,gamma_k,rare_count,level_count,level_mass,weight_max,weight_min,ess,failures",
    );
    for i in 0..n_theta {
        let _ = write!(out, ",theta_{i}");
    }
    for i in 0..n_d {
        let _ = write!(out, ",d_{i}");
    }
    out.push('\n');
    let push_reals = |out: &mut String, values: &[f64], width: usize| {
        for i in 0..width {
            out.push(',');
            if let Some(v) = values.get(i) {
                out.push_str(&real(*v));
            }
        }
    };
    for r in &history.iterations {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.status.label(),
            r.n,
            real(r.alpha),
            real(r.rho_quantile),
            real(r.gamma_k),
            r.rare_count,
            r.level_count,
            real(r.level_mass),
            real(r.weight_max),
            real(r.weight_min),
            real(r.ess),
            r.failures
        );
        push_reals(&mut out, &r.theta.flatten(), n_theta);
        push_reals(&mut out, &r.d_vector, n_d);
        out.push('\n');
    }
    let _ = write!(out, "{},final,,,,,,,,,,,", history.iterations.len());
    push_reals(&mut out, &history.final_theta.flatten(), n_theta);
    push_reals(&mut out, &[], n_d);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{BlockParams, ParamPoint};

    #[test]
    fn reals_use_seventeen_digits_and_round_trip() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(1.3499e-3), "1.3499000000000000e-3");
        for x in [0.1, 1.0 / 3.0, 1e-300, f64::MAX, -2.5e-7] {
            assert_eq!(real(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn estimates_round_trip() {
        let r = EstimateReport {
            gamma_test: 0.14,
            p_hat: 1.0 / 3.0,
            std_err: 0.01,
            rare_count: 3,
            n: 9,
            ess: 9.0,
            method: Method::Naive,
        };
        let text = estimates_csv(&[r.clone(), r.clone()]);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_estimates(&text, Method::Naive).unwrap(), vec![r.clone(), r]);
        assert!(parse_estimates("gamma_test\n", Method::Naive).is_err());
    }

    #[test]
    fn empty_history_has_single_theta0_row() {
        let theta = ParamPoint(vec![BlockParams::Beta { alpha: 2.0, beta: 3.0 }]);
        let h = CeHistory {
            theta0: theta.clone(),
            iterations: vec![],
            final_theta: theta,
        };
        let text = history_csv(&h);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with("failures,theta_0,theta_1"));
        assert_eq!(lines[2], "0,final,,,,,,,,,,,,2.0000000000000000e0,3.0000000000000000e0");
    }
}
