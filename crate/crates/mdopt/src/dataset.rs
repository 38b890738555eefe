//! Dataset and metadata CSV files.
//!
//! A dataset file is `domain_id,user_id,item_id,label,split`, one interaction
//! per row, preceded by an optional `# num_users=.. num_items=..` line that
//! preserves the id space of generated data. Without it the id space is
//! inferred from the largest ids present.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use mdopt_core::data::{ctr_ratio, DomainData, Interaction, MultiDomainDataset, Split};

use crate::error::{Error, Result};

pub const DATASET_HEADER: [&str; 5] = ["domain_id", "user_id", "item_id", "label", "split"];
pub const METADATA_HEADER: [&str; 4] = ["domain_id", "n_pos", "n_neg", "ctr_ratio"];

pub fn write_dataset<W: Write>(data: &MultiDomainDataset, mut out: W) -> Result<()> {
    writeln!(out, "# num_users={} num_items={}", data.num_users, data.num_items)
        .map_err(Error::io("<dataset>"))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for d in data.domains() {
        for (x, s) in d.interactions().iter().zip(d.splits()) {
            w.write_record([
                d.domain_id.to_string(),
                x.user.to_string(),
                x.item.to_string(),
                u8::from(x.clicked).to_string(),
                s.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(Error::io("<dataset>"))?;
    Ok(())
}

pub fn save_dataset(data: &MultiDomainDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    write_dataset(data, std::io::BufWriter::new(file))
}

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, line: u64) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {raw:?}"),
    })
}

fn parse_id_space(comment: &str, line: u64) -> Result<(usize, usize)> {
    let mut users = None;
    let mut items = None;
    for part in comment.trim_start_matches('#').split_whitespace() {
        match part.split_once('=') {
            Some(("num_users", v)) => users = Some(parse_field(v, "num_users", line)?),
            Some(("num_items", v)) => items = Some(parse_field(v, "num_items", line)?),
            _ => {}
        }
    }
    match (users, items) {
        (Some(u), Some(i)) => Ok((u, i)),
        _ => Err(Error::Parse {
            line,
            message: "expected `# num_users=N num_items=M`".into(),
        }),
    }
}

pub fn read_dataset(text: &str) -> Result<MultiDomainDataset> {
    let (id_space, body, offset) = match text.lines().next() {
        Some(first) if first.starts_with('#') => {
            let rest = text.split_once('\n').map_or("", |(_, r)| r);
            (Some(parse_id_space(first, 1)?), rest, 1)
        }
        _ => (None, text, 0),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(DATASET_HEADER) {
        return Err(Error::Parse {
            line: 1 + offset,
            message: format!("expected header {}", DATASET_HEADER.join(",")),
        });
    }
    let mut rows: BTreeMap<usize, (Vec<Interaction>, Vec<Split>)> = BTreeMap::new();
    let (mut max_user, mut max_item) = (None::<usize>, None::<usize>);
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line()) + offset;
        if record.len() != DATASET_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", DATASET_HEADER.len(), record.len()),
            });
        }
        let domain: usize = parse_field(&record[0], "domain_id", line)?;
        let user: usize = parse_field(&record[1], "user_id", line)?;
        let item: usize = parse_field(&record[2], "item_id", line)?;
        let clicked = match record[3].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        };
        let split: Split = record[4].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("unknown split {:?}", &record[4]),
        })?;
        if let Some((nu, ni)) = id_space {
            if user >= nu || item >= ni {
                return Err(Error::Parse {
                    line,
                    message: format!("id out of range (user {user} of {nu}, item {item} of {ni})"),
                });
            }
        }
        max_user = max_user.max(Some(user));
        max_item = max_item.max(Some(item));
        let entry = rows.entry(domain).or_default();
        entry.0.push(Interaction::new(user, item, clicked));
        entry.1.push(split);
    }
    if rows.is_empty() {
        return Err(mdopt_core::Error::Dataset("dataset file has no interactions".into()).into());
    }
    let n = rows.len();
    if rows.keys().next_back() != Some(&(n - 1)) {
        return Err(mdopt_core::Error::Dataset("domain ids must be dense 0..n-1".into()).into());
    }
    let (num_users, num_items) = id_space.unwrap_or((max_user.unwrap_or(0) + 1, max_item.unwrap_or(0) + 1));
    let domains = rows
        .into_iter()
        .map(|(id, (xs, splits))| DomainData::with_splits(id, xs, splits))
        .collect::<mdopt_core::Result<Vec<_>>>()?;
    Ok(MultiDomainDataset::new(domains, num_users, num_items)?)
}

pub fn load_dataset(path: &Path) -> Result<MultiDomainDataset> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    read_dataset(&text)
}

pub fn write_metadata<W: Write>(data: &MultiDomainDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METADATA_HEADER)?;
    for d in data.domains() {
        let ratio = ctr_ratio(d).map(|r| r.to_string()).unwrap_or_default();
        w.write_record([d.domain_id.to_string(), d.n_pos().to_string(), d.n_neg().to_string(), ratio])?;
    }
    w.flush().map_err(Error::io("<metadata>"))?;
    Ok(())
}

pub fn save_metadata(data: &MultiDomainDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    write_metadata(data, std::io::BufWriter::new(file))
}

/// Per-domain sample count, share of all samples and CTR ratio.
pub fn stats_table(data: &MultiDomainDataset) -> String {
    let total = data.total_rows().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:>9} {:>8} {:>9}", "domain", "samples", "percent", "ctr_ratio");
    for d in data.domains() {
        let ratio = ctr_ratio(d).map_or("-".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(
            s,
            "{:>6} {:>9} {:>7.2}% {:>9}",
            d.domain_id,
            d.len(),
            100.0 * d.len() as f64 / total,
            ratio
        );
    }
    let _ = writeln!(s, "{:>6} {:>9}", "total", data.total_rows());
    s
}
