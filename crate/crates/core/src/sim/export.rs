//! Artifact writers. Every float goes through [`sig9`], so equal runs give
//! byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::phase2::SlotVerdict;

use super::metrics::{summarize, PHASES};
use super::SimRun;

/// Formats `x` with 9 significant digits in the shortest form that parses
/// back to the rounded value.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific notation parses");
    // avoid "-0"
    if rounded == 0.0 {
        return "0".to_string();
    }
    rounded.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(run: &SimRun, mut w: W) -> io::Result<()> {
    write!(w, "time_ms,slot,alive_pct,energy_std,leader,p_star")?;
    for p in PHASES {
        write!(w, ",msgs_{}", p.as_str())?;
    }
    for id in &run.nodes {
        write!(w, ",energy_pct_{}", id.0)?;
    }
    for id in &run.nodes {
        write!(w, ",payoff_{}", id.0)?;
    }
    writeln!(w)?;
    for f in &run.frames {
        write!(
            w,
            "{},{},{},{},{},{}",
            f.time_ms,
            f.slot,
            sig9(100.0 * f.alive_fraction()),
            sig9(f.energy_std()),
            f.leader.map(|l| l.0.to_string()).unwrap_or_default(),
            opt(f.p_star)
        )?;
        for m in f.messages {
            write!(w, ",{m}")?;
        }
        for e in &f.energy_pct {
            write!(w, ",{}", sig9(*e))?;
        }
        for p in &f.payoff {
            write!(w, ",{}", sig9(*p))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_slots_csv<W: Write>(run: &SimRun, mut w: W) -> io::Result<()> {
    writeln!(w, "slot,incumbent,verdict,leader,p_star,reason,claims,blacklisted,adjudication_errors,messages")?;
    for r in &run.slots {
        let (verdict, leader, p_star, reason) = match &r.verdict {
            SlotVerdict::Elected { leader, p_star } => ("elected", Some(*leader), Some(*p_star), ""),
            SlotVerdict::Reformed { leader, p_star, reason } => ("reformed", Some(*leader), Some(*p_star), reason.as_str()),
            SlotVerdict::Dissolved => ("dissolved", None, None, ""),
        };
        let blacklisted: Vec<String> = r.blacklisted.iter().map(|(n, why)| format!("{}:{}", n.0, why.as_str())).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            r.incumbent.0,
            verdict,
            leader.map(|l| l.0.to_string()).unwrap_or_default(),
            opt(p_star),
            reason,
            r.claims.len(),
            blacklisted.join(" "),
            r.adjudication_errors,
            r.messages
        )?;
    }
    Ok(())
}

/// Full slot transcripts, one JSON object per line.
pub fn write_slots_jsonl<W: Write>(run: &SimRun, mut w: W) -> io::Result<()> {
    for r in &run.slots {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(run: &SimRun, mut w: W) -> io::Result<()> {
    let s = summarize(&run.frames);
    writeln!(w, "mode: {}", run.mode)?;
    writeln!(w, "nodes: {}", run.nodes.len())?;
    writeln!(w, "frames: {}", s.frames)?;
    writeln!(w, "eta_min: {}", run.eta_min)?;
    writeln!(w, "initial_energy_std: {}", sig9(s.initial_energy_std))?;
    writeln!(w, "terminal_energy_std: {}", sig9(s.terminal_energy_std))?;
    writeln!(w, "terminal_alive_pct: {}", sig9(100.0 * s.terminal_alive_fraction))?;
    match s.first_death_ms {
        Some(t) => writeln!(w, "first_death_ms: {t}")?,
        None => writeln!(w, "first_death_ms: none")?,
    }
    writeln!(w, "mean_payoff: {}", sig9(s.mean_payoff))?;
    for (p, m) in PHASES.iter().zip(s.messages) {
        writeln!(w, "messages_{}: {m}", p.as_str())?;
    }
    writeln!(w, "elections: {}", run.elections.len())?;
    writeln!(w, "credit_shortfalls: {}", run.credit_shortfalls)?;
    let infeasible: Vec<String> = run.infeasible_quota_slots.iter().map(|(t, n)| format!("{t}:{n}")).collect();
    writeln!(w, "infeasible_quota_slots: {}", infeasible.join(" "))?;
    writeln!(w, "ledger_conserved: {}", run.ledger.conserved())?;
    Ok(())
}

/// Writes metrics.csv, slots.csv, slots.jsonl, messages.csv, ledger.csv and
/// summary.txt into `dir`, which must exist.
pub fn write_artifacts(run: &SimRun, dir: &Path) -> io::Result<()> {
    fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(dir.join(name))?))
    }
    let mut f = create(dir, "metrics.csv")?;
    write_metrics_csv(run, &mut f)?;
    f.flush()?;
    let mut f = create(dir, "slots.csv")?;
    write_slots_csv(run, &mut f)?;
    f.flush()?;
    let mut f = create(dir, "slots.jsonl")?;
    write_slots_jsonl(run, &mut f)?;
    f.flush()?;
    let mut f = create(dir, "messages.csv")?;
    run.log.write_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, "ledger.csv")?;
    run.ledger.write_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, "summary.txt")?;
    write_summary(run, &mut f)?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(3.1415926535), "3.14159265");
        assert_eq!(sig9(123456789012.0), "123456789000");
        assert_eq!(sig9(-0.0), "0");
        assert_eq!(sig9(1e-7), "0.0000001");
        assert_eq!(sig9(2.0 / 3.0), "0.666666667");
    }
}
