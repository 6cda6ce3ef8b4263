//! Plain-text tableau catalog entries:
//!
//! ```text
//! nu p
//! c_1 ... c_nu
//! a_11 ... a_1nuhat
//! ...
//! ```
//!
//! Every coefficient is written as `num/den`.

use super::{DvdTableau, Rational, TableauError};

fn fmt_rat(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn parse_rat(tok: &str) -> Result<Rational, TableauError> {
    let bad = || TableauError::Parse(format!("bad rational `{tok}`"));
    match tok.split_once('/') {
        Some((n, d)) => {
            let n: i128 = n.trim().parse().map_err(|_| bad())?;
            let d: i128 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(Rational::new(n, d))
        }
        None => tok
            .trim()
            .parse::<i128>()
            .map(Rational::from_integer)
            .map_err(|_| bad()),
    }
}

pub(super) fn to_text(t: &DvdTableau) -> String {
    let mut out = format!("{} {}\n", t.nu, t.order);
    let line = |v: &[Rational]| v.iter().map(fmt_rat).collect::<Vec<_>>().join(" ");
    out.push_str(&line(&t.nodes));
    out.push('\n');
    for row in &t.rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub(super) fn from_text(name: String, src: &str) -> Result<DvdTableau, TableauError> {
    let mut lines = src
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| TableauError::Parse("missing header".into()))?;
    let mut hdr = header.split_whitespace();
    let nu: usize = hdr
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TableauError::Parse(format!("bad header `{header}`")))?;
    let order: u32 = hdr
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TableauError::Parse(format!("bad header `{header}`")))?;
    let mut read_row = || -> Result<Vec<Rational>, TableauError> {
        lines
            .next()
            .ok_or_else(|| TableauError::Parse("unexpected end of input".into()))?
            .split_whitespace()
            .map(parse_rat)
            .collect()
    };
    let nodes = read_row()?;
    if nodes.len() != nu {
        return Err(TableauError::Parse(format!(
            "expected {nu} nodes, found {}",
            nodes.len()
        )));
    }
    let rows = (0..nu).map(|_| read_row()).collect::<Result<Vec<_>, _>>()?;
    DvdTableau::new(name, nodes, rows, order)
}
