//! Field snapshots: a header line `# dim nx ny lx ly time`, then one value
//! per line in storage order with 17 significant digits.

use std::io::{BufRead, Write};

use super::{BoundaryCondition, Field, GridError, UniformGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub field: Field,
    pub time: f64,
}

pub fn write_snapshot<W: Write>(mut w: W, field: &Field, time: f64) -> Result<(), GridError> {
    let g = field.grid();
    let [nx, ny] = g.n();
    let [lx, ly] = g.length();
    writeln!(w, "# {} {nx} {ny} {lx:.16e} {ly:.16e} {time:.16e}", g.dim())?;
    for v in field.values() {
        writeln!(w, "{v:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// The boundary condition and origin are not part of the format; the caller
/// supplies the boundary condition and the origin defaults to zero.
pub fn read_snapshot<R: BufRead>(r: R, bc: BoundaryCondition) -> Result<Snapshot, GridError> {
    let bad = |m: &str| GridError::Snapshot(m.to_string());
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty input"))??;
    let tok: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| bad("header must start with `#`"))?
        .split_whitespace()
        .collect();
    if tok.len() != 6 {
        return Err(bad("header needs `dim nx ny lx ly time`"));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(&format!("bad integer `{s}`")))
    };
    let float = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(&format!("bad number `{s}`")))
    };
    let grid = UniformGrid::new(
        int(tok[0])?,
        [int(tok[1])?, int(tok[2])?],
        [float(tok[3])?, float(tok[4])?],
        bc,
    )?;
    let time = float(tok[5])?;
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            values.push(float(t)?);
        }
    }
    Ok(Snapshot {
        field: Field::new(grid, values)?,
        time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for grid in [
            UniformGrid::new_1d(33, std::f64::consts::TAU, BoundaryCondition::Periodic).unwrap(),
            UniformGrid::new_2d(5, 4, 2.0, 1.0 / 3.0, BoundaryCondition::Periodic).unwrap(),
        ] {
            let v = (0..grid.len())
                .map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300)))
                .collect();
            let f = Field::new(grid, v).unwrap();
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &f, 0.1).unwrap();
            let back = read_snapshot(&buf[..], BoundaryCondition::Periodic).unwrap();
            assert_eq!(back.time, 0.1);
            assert_eq!(back.field, f);
        }
    }

    #[test]
    fn header_layout() {
        let g = UniformGrid::new_1d(2, 1.0, BoundaryCondition::Periodic).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &Field::new(g, vec![0.5, -1.0]).unwrap(), 0.0).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# 1 2 1 "));
        assert_eq!(lines[1], "5.0000000000000000e-1");
    }

    #[test]
    fn malformed_input() {
        let bc = BoundaryCondition::Periodic;
        assert!(read_snapshot(&b""[..], bc).is_err());
        assert!(read_snapshot(&b"1 2 1 1 1 0\n1\n2\n"[..], bc).is_err());
        assert!(read_snapshot(&b"# 1 2 1 1 1 0\n1\n"[..], bc).is_err());
        assert!(read_snapshot(&b"# 1 2 1 1 1 0\n1\nx\n"[..], bc).is_err());
        assert!(read_snapshot(&b"# 1 2 1 1 1 0\n1\n2\n"[..], bc).is_ok());
    }
}
