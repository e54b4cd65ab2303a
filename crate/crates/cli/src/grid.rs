//! Grid arguments: `a,b,c` lists, `start:stop:count` linear ranges, or a
//! bare count `N` for the default adoption grid.

use anyhow::{bail, Context, Result};
use p2p_der::adoption::default_t_grid;

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    if let Some((range, count)) = s.rsplit_once(':') {
        let (a, b) = range
            .split_once(':')
            .with_context(|| format!("range `{s}` must be start:stop:count"))?;
        let (a, b): (f64, f64) = (a.trim().parse()?, b.trim().parse()?);
        let n: usize = count.trim().parse()?;
        return Ok(match n {
            0 => bail!("range `{s}` needs a positive count"),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        });
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value `{v}`")))
        .collect()
}

/// Adoption rates; a bare integer means that many default grid points.
pub fn parse_t_grid(s: &str) -> Result<Vec<f64>> {
    let t = match s.trim().parse::<usize>() {
        Ok(0) => bail!("t grid needs at least one point"),
        Ok(n) => default_t_grid(n),
        Err(_) => parse_list(s)?,
    };
    if t.iter().any(|x| !(0.0..=1.0).contains(x)) {
        bail!("adoption rates must lie in [0, 1]");
    }
    Ok(t)
}

pub fn parse_p_grid(s: &str) -> Result<Vec<f64>> {
    let p = parse_list(s)?;
    if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        bail!("prices must be positive");
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms() {
        assert_eq!(parse_list("1, 2.5,3").unwrap(), vec![1.0, 2.5, 3.0]);
        assert_eq!(parse_list("100:200:3").unwrap(), vec![100.0, 150.0, 200.0]);
        assert_eq!(parse_t_grid("5").unwrap().len(), 5);
        assert!(parse_t_grid("0.5,1.5").is_err());
        assert!(parse_p_grid("-1").is_err());
        assert!(parse_list("1:2").is_err());
    }
}
