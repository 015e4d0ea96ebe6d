//! One transition per line:
//! `{"episode":0,"t":0,"s":[0.0,1.0],"a":3,"r":-1.0,"s_next":[0.0,2.0],"done":false}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datastore::transition::Transition;
use crate::error::{Error, Result};

pub fn load_jsonl(path: &Path) -> Result<Vec<Transition>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tr: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        tr.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(tr);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, transitions: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for tr in transitions {
        serde_json::to_writer(&mut w, tr)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
