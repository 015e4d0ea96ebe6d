use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::datastore::transition::Transition;
use crate::error::Result;

/// Undiscounted return of every episode id present in `transitions`.
pub fn trajectory_returns(transitions: &[Transition]) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for tr in transitions {
        *out.entry(tr.episode).or_insert(0.0) += tr.r;
    }
    out
}

/// `episode,return[,label]` rows.
pub fn write_returns_csv(path: &Path, returns: &BTreeMap<u64, f64>, labels: Option<&BTreeMap<u64, String>>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    match labels {
        Some(_) => writeln!(w, "episode,return,route")?,
        None => writeln!(w, "episode,return")?,
    }
    for (ep, ret) in returns {
        match labels.and_then(|l| l.get(ep)) {
            Some(label) => writeln!(w, "{ep},{ret},{label}")?,
            None if labels.is_some() => writeln!(w, "{ep},{ret},")?,
            None => writeln!(w, "{ep},{ret}")?,
        }
    }
    w.flush()?;
    Ok(())
}
