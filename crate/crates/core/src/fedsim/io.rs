//! Task export/import as delimited text.
//!
//! Layout (space-delimited, one record per line):
//!
//! ```text
//! synthetic-task v1
//! n_clients 100
//! dimension 60
//! classes 10
//! alpha 1
//! beta 1
//! size_exponent 1.5
//! min_size 10
//! total_size 20000
//! seed 1
//! client <id> <size> <train_count> <model_mean> <feature_mean>
//! <label> <f_1> ... <f_d>        (size lines per client)
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a load after a
//! save reproduces the task bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use super::synthetic::{ClientData, SyntheticConfig, SyntheticTask};
use crate::error::{Error, Result};
use crate::sampling::ClientWeights;

const MAGIC: &str = "synthetic-task v1";

/// Serialize a task to the text format.
pub fn task_to_string(task: &SyntheticTask) -> String {
    let cfg = &task.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "n_clients {}", cfg.n_clients);
    let _ = writeln!(out, "dimension {}", cfg.dimension);
    let _ = writeln!(out, "classes {}", cfg.classes);
    let _ = writeln!(out, "alpha {}", cfg.alpha);
    let _ = writeln!(out, "beta {}", cfg.beta);
    let _ = writeln!(out, "size_exponent {}", cfg.size_exponent);
    let _ = writeln!(out, "min_size {}", cfg.min_size);
    let _ = writeln!(out, "total_size {}", cfg.total_size);
    let _ = writeln!(out, "seed {}", cfg.seed);
    for (i, client) in task.clients.iter().enumerate() {
        let _ = writeln!(
            out,
            "client {i} {} {} {} {}",
            client.len(),
            client.train_count,
            task.model_means[i],
            task.feature_means[i],
        );
        for s in 0..client.len() {
            let (x, y) = client.sample(s);
            let _ = write!(out, "{y}");
            for v in x {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.inner
            .next()
            .ok_or_else(|| Error::parse(self.line_no, "unexpected end of file"))
    }
}

fn field<T: std::str::FromStr>(line: &str, key: &str, line_no: usize) -> Result<T> {
    let mut parts = line.split_ascii_whitespace();
    let k = parts
        .next()
        .ok_or_else(|| Error::parse(line_no, "empty line"))?;
    if k != key {
        return Err(Error::parse(line_no, format!("expected \"{key}\", got \"{k}\"")));
    }
    let v = parts
        .next()
        .ok_or_else(|| Error::parse(line_no, format!("missing value for {key}")))?;
    v.parse()
        .map_err(|_| Error::parse(line_no, format!("cannot parse {key} value \"{v}\"")))
}

/// Parse a task from the text format.
pub fn task_from_str(text: &str) -> Result<SyntheticTask> {
    let mut lines = Lines {
        inner: text.lines(),
        line_no: 0,
    };
    let magic = lines.next_line()?;
    if magic.trim() != MAGIC {
        return Err(Error::parse(1, format!("expected header \"{MAGIC}\"")));
    }
    let config = SyntheticConfig {
        n_clients: field(lines.next_line()?, "n_clients", lines.line_no)?,
        dimension: field(lines.next_line()?, "dimension", lines.line_no)?,
        classes: field(lines.next_line()?, "classes", lines.line_no)?,
        alpha: field(lines.next_line()?, "alpha", lines.line_no)?,
        beta: field(lines.next_line()?, "beta", lines.line_no)?,
        size_exponent: field(lines.next_line()?, "size_exponent", lines.line_no)?,
        min_size: field(lines.next_line()?, "min_size", lines.line_no)?,
        total_size: field(lines.next_line()?, "total_size", lines.line_no)?,
        seed: field(lines.next_line()?, "seed", lines.line_no)?,
    };
    let mut clients = Vec::with_capacity(config.n_clients);
    let mut sizes = Vec::with_capacity(config.n_clients);
    let mut model_means = Vec::with_capacity(config.n_clients);
    let mut feature_means = Vec::with_capacity(config.n_clients);
    for i in 0..config.n_clients {
        let header = lines.next_line()?;
        let line_no = lines.line_no;
        let mut parts = header.split_ascii_whitespace();
        if parts.next() != Some("client") {
            return Err(Error::parse(line_no, "expected a client header"));
        }
        let id: usize = parse_next(&mut parts, "client id", line_no)?;
        if id != i {
            return Err(Error::parse(line_no, format!("expected client {i}, got {id}")));
        }
        let size: usize = parse_next(&mut parts, "size", line_no)?;
        let train_count: usize = parse_next(&mut parts, "train count", line_no)?;
        let u: f64 = parse_next(&mut parts, "model mean", line_no)?;
        let b: f64 = parse_next(&mut parts, "feature mean", line_no)?;
        if train_count == 0 || train_count >= size {
            return Err(Error::parse(line_no, "invalid train/test split"));
        }
        let mut features = Vec::with_capacity(size * config.dimension);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let line = lines.next_line()?;
            let line_no = lines.line_no;
            let mut parts = line.split_ascii_whitespace();
            let y: u8 = parse_next(&mut parts, "label", line_no)?;
            if y as usize >= config.classes {
                return Err(Error::parse(line_no, format!("label {y} out of range")));
            }
            labels.push(y);
            let mut count = 0;
            for v in parts {
                let f: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad feature \"{v}\"")))?;
                features.push(f);
                count += 1;
            }
            if count != config.dimension {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} features, got {count}", config.dimension),
                ));
            }
        }
        sizes.push(size);
        model_means.push(u);
        feature_means.push(b);
        clients.push(ClientData::new(features, labels, config.dimension, train_count));
    }
    let lambda = ClientWeights::from_sizes(&sizes)?;
    Ok(SyntheticTask {
        clients,
        lambda,
        sizes,
        model_means,
        feature_means,
        config,
    })
}

fn parse_next<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    what: &str,
    line_no: usize,
) -> Result<T> {
    parts
        .next()
        .ok_or_else(|| Error::parse(line_no, format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::parse(line_no, format!("cannot parse {what}")))
}

pub fn save_task(task: &SyntheticTask, path: &Path) -> Result<()> {
    std::fs::write(path, task_to_string(task))?;
    Ok(())
}

pub fn load_task(path: &Path) -> Result<SyntheticTask> {
    let text = std::fs::read_to_string(path)?;
    task_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::synthetic::generate_synthetic;

    #[test]
    fn round_trip_is_lossless() {
        let task = generate_synthetic(&SyntheticConfig {
            n_clients: 5,
            dimension: 4,
            classes: 3,
            total_size: 120,
            min_size: 8,
            seed: 77,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let text = task_to_string(&task);
        let back = task_from_str(&text).unwrap();
        assert_eq!(task, back);
        // Serialization is stable too.
        assert_eq!(text, task_to_string(&back));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let task = generate_synthetic(&SyntheticConfig {
            n_clients: 2,
            dimension: 3,
            classes: 2,
            total_size: 24,
            min_size: 8,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let text = task_to_string(&task);
        let mut lines: Vec<&str> = text.lines().collect();
        lines[11] = "9 not-a-number 0.5 0.5";
        let err = task_from_str(&lines.join("\n")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 12),
            other => panic!("expected a parse error, got {other}"),
        }
    }
}
