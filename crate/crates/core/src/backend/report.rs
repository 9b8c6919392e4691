/// A parsed runner report:
///
/// ```text
/// TIME <seconds>
/// OUT <n>
/// <value 1>
/// ...
/// <value n>
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub time: f64,
    pub outputs: Vec<f64>,
}

/// Parses a runner report. Returns `None` for anything that deviates from
/// the format, including a non-positive time or trailing content. A single
/// trailing newline is accepted.
pub fn parse_report(text: &str) -> Option<Report> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));

    let time = parse_number(lines.next()?.strip_prefix("TIME ")?)?;
    if time <= 0.0 {
        return None;
    }
    let n: usize = lines.next()?.strip_prefix("OUT ")?.parse().ok()?;
    let mut outputs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        outputs.push(parse_number(lines.next()?)?);
    }
    if lines.next().is_some() {
        return None;
    }
    Some(Report { time, outputs })
}

fn parse_number(s: &str) -> Option<f64> {
    // Reject the spellings f64::from_str accepts beyond plain decimals.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed() {
        let r = parse_report("TIME 0.125\nOUT 2\n1.5\n-2e-3\n").unwrap();
        assert_eq!(r.time, 0.125);
        assert_eq!(r.outputs, vec![1.5, -0.002]);
        let r = parse_report("TIME 3\nOUT 0").unwrap();
        assert!(r.outputs.is_empty());
    }

    #[test]
    fn malformed() {
        for bad in [
            "",
            "garbage",
            "TIME x\nOUT 0\n",
            "TIME 0\nOUT 0\n",
            "TIME -1\nOUT 0\n",
            "TIME 1\nOUT 2\n1.0\n",
            "TIME 1\nOUT 1\n1.0\n2.0\n",
            "TIME 1\nOUT 1\nnan\n",
            "TIME 1\nOUT 1\ninf\n",
            "time 1\nOUT 0\n",
            "TIME  1\nOUT 0\n",
            "TIME 1\nOUT 0\n\n",
        ] {
            assert!(parse_report(bad).is_none(), "{bad:?}");
        }
    }
}
