use super::sort::ExternalSorter;
use super::tsv::{line_fields, LineSink, TsvRow};
use super::SortSpec;
use crate::error::{Error, Result};

const DICT: &str = "0";
const PROBE: &str = "1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub probes: u64,
    pub joined: u64,
    /// Probes whose key is absent from the dictionary.
    pub missing: u64,
}

/// Sort-based lookup join. For every `(key, payload)` probe whose key has a
/// dictionary entry, `emit(value, payload)` is called. When a key occurs
/// several times in the dictionary the smallest value wins. Emission follows
/// key order.
pub fn dict_join<D, P, F>(dict: D, probes: P, spec: &SortSpec, mut emit: F) -> Result<JoinStats>
where
    D: IntoIterator<Item = (String, String)>,
    P: IntoIterator<Item = (String, String)>,
    F: FnMut(&str, &str) -> Result<()>,
{
    let mut sorter = ExternalSorter::new(spec.clone().with_stable(true))?;
    for (k, v) in dict {
        sorter.push_line(&TsvRow::new(k).field(DICT).field(v).to_line())?;
    }
    let mut stats = JoinStats::default();
    for (k, p) in probes {
        stats.probes += 1;
        sorter.push_line(&TsvRow::new(k).field(PROBE).field(p).to_line())?;
    }
    let mut current_key: Option<String> = None;
    let mut value: Option<String> = None;
    for line in sorter.finish()? {
        let line = line?;
        let fields = line_fields(&line);
        let [key, tag, payload] = fields.as_slice() else {
            return Err(Error::Inconsistent(format!("join line with {} fields", fields.len())));
        };
        if current_key.as_deref() != Some(key) {
            current_key = Some(key.clone());
            value = None;
        }
        if tag == DICT {
            // Full-line order puts the smallest value first.
            value.get_or_insert_with(|| payload.clone());
        } else {
            match &value {
                Some(v) => {
                    stats.joined += 1;
                    emit(v, payload)?;
                }
                None => stats.missing += 1,
            }
        }
    }
    Ok(stats)
}

/// Sorted distinct lines, passed to `emit` in byte order.
pub fn sorted_distinct<I, F>(lines: I, spec: &SortSpec, mut emit: F) -> Result<u64>
where
    I: IntoIterator<Item = Vec<u8>>,
    F: FnMut(&[u8]) -> Result<()>,
{
    let mut sorter = ExternalSorter::new(spec.clone().with_stable(true))?;
    for l in lines {
        sorter.push_line(&l)?;
    }
    let mut prev: Option<Vec<u8>> = None;
    let mut n = 0;
    for line in sorter.finish()? {
        let line = line?;
        if prev.as_deref() != Some(line.as_slice()) {
            emit(&line)?;
            n += 1;
            prev = Some(line);
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn lookup_join() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SortSpec::new(dir.path());
        let dict = pairs(&[("w1", "10.1/a"), ("w2", "10.1/b"), ("w2", "10.1/0")]);
        let probes = pairs(&[("w2", "x"), ("w3", "y"), ("w1", "z\tq")]);
        let mut out = Vec::new();
        let s = dict_join(dict, probes, &spec, |v, p| {
            out.push((v.to_string(), p.to_string()));
            Ok(())
        })
        .unwrap();
        assert_eq!(out, pairs(&[("10.1/a", "z\tq"), ("10.1/0", "x")]));
        assert_eq!((s.probes, s.joined, s.missing), (3, 2, 1));
    }

    #[test]
    fn distinct() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        let n = sorted_distinct(["b", "a", "b", "c", "a"].map(|s| s.as_bytes().to_vec()), &SortSpec::new(dir.path()), |l| {
            out.push(l.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 3);
        assert_eq!(out, vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec()]);
    }
}
