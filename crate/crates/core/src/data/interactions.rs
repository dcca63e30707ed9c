use std::path::Path;

use crate::error::{Error, Result};
use crate::io::read_to_string;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Raw timestamped interactions in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    parse_interactions(&read_to_string(path)?)
}

/// Parses `user<SEP>item<SEP>timestamp` lines. The separator is tab if the
/// first data line contains one, comma otherwise. `#` lines and blank lines
/// are skipped; CRLF endings are accepted.
pub fn parse_interactions(text: &str) -> Result<InteractionLog> {
    let mut sep: Option<char> = None;
    let mut records = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let sep = *sep.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields separated by {sep:?}, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty user or item id".into(),
            });
        }
        let timestamp = fields[2].parse::<u64>().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid timestamp {:?}", fields[2]),
        })?;
        records.push(Interaction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::domain("interaction file contains no records"));
    }
    Ok(InteractionLog { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines() {
        let log = parse_interactions("u1,i1,10\nu1,i2,11\nu2,i1,12\n").unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.records[2].user, "u2");
        assert_eq!(log.records[1].timestamp, 11);
    }

    #[test]
    fn malformed_timestamp_reports_line() {
        let err = parse_interactions("# header\nu1,i1,5\nu1,i9,notatime\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn crlf_matches_lf() {
        let lf = "u1,i1,1\nu2,i2,2\n";
        let crlf = "u1,i1,1\r\nu2,i2,2\r\n";
        assert_eq!(parse_interactions(lf).unwrap(), parse_interactions(crlf).unwrap());
    }

    #[test]
    fn tab_separator_and_empty_file() {
        let log = parse_interactions("a\tb\t3\n").unwrap();
        assert_eq!(log.records[0].item, "b");
        assert!(matches!(parse_interactions("# only comments\n\n"), Err(Error::Domain(_))));
        assert!(parse_interactions("u,i\n").is_err());
        assert!(parse_interactions("u,i,-4\n").is_err());
    }
}
