use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{measure_reuse, Request, Sensitivity, TruthSpan, Workload, WorkloadSpec};
use crate::error::WorkloadError;
use crate::types::{tokenize, OwnerClass, UserId};

/// One row of an ingested conversation corpus. Span offsets are byte
/// offsets into `text`; both must be present or both absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub user_id: u64,
    pub turn_index: u32,
    pub text: String,
    #[serde(default)]
    pub secret_span_start: Option<usize>,
    #[serde(default)]
    pub secret_span_end: Option<usize>,
    #[serde(default)]
    pub category: Option<String>,
}

fn read_rows<R: std::io::Read>(rdr: R) -> Result<Vec<CorpusRow>, WorkloadError> {
    let mut out = Vec::new();
    let mut r = csv::Reader::from_reader(rdr);
    for (i, row) in r.deserialize::<CorpusRow>().enumerate() {
        let row = row.map_err(|e| WorkloadError::Corpus(format!("row {}: {e}", i + 1)))?;
        match (row.secret_span_start, row.secret_span_end) {
            (None, None) => {}
            (Some(s), Some(e)) if s < e && e <= row.text.len() => {}
            _ => {
                return Err(WorkloadError::Corpus(format!(
                    "row {}: invalid secret span for text of {} bytes",
                    i + 1,
                    row.text.len()
                )))
            }
        }
        if !row.text.is_ascii() {
            return Err(WorkloadError::Corpus(format!(
                "row {}: text must be ASCII for the byte vocabulary",
                i + 1
            )));
        }
        out.push(row);
    }
    Ok(out)
}

/// Build a workload from a CSV corpus. Each user's rows form one session
/// ordered by `turn_index`; every turn carries the full conversation so far,
/// so later turns reuse the earlier ones as a prefix. Arrivals are spaced
/// by `spec.mean_interarrival_ms` in row order.
pub fn load_corpus(path: &Path, spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    let file = std::fs::File::open(path)
        .map_err(|e| WorkloadError::Corpus(format!("{}: {e}", path.display())))?;
    corpus_from_reader(file, spec)
}

pub(crate) fn corpus_from_reader<R: std::io::Read>(
    rdr: R,
    spec: &WorkloadSpec,
) -> Result<Workload, WorkloadError> {
    let rows = read_rows(rdr)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (rows[i].turn_index, i));
    let mut convo: HashMap<u64, (String, Vec<u64>)> = HashMap::new();
    let mut requests = Vec::with_capacity(rows.len());
    for (n, &i) in order.iter().enumerate() {
        let row = &rows[i];
        let (text, history) = convo.entry(row.user_id).or_default();
        if !text.is_empty() {
            text.push('\n');
        }
        let offset = text.len();
        text.push_str(&row.text);
        let mut secrets: Vec<TruthSpan> = Vec::new();
        // Earlier turns' spans stay sensitive in the replayed prefix.
        for &h in history.iter() {
            let prev: &Request = &requests[h as usize];
            secrets.extend(prev.secrets.iter().cloned());
        }
        secrets.dedup();
        if let (Some(s), Some(e)) = (row.secret_span_start, row.secret_span_end) {
            secrets.push(TruthSpan {
                span: offset + s..offset + e,
                sensitivity: Sensitivity::Always,
                category: row.category.clone().unwrap_or_else(|| "Uncategorized".into()),
                tier1_covered: false,
                context_cue: None,
            });
        }
        requests.push(Request {
            id: n as u64,
            user: UserId(row.user_id),
            owner: OwnerClass::Customer,
            session: row.user_id,
            turn: row.turn_index,
            arrival_ms: n as f64 * spec.mean_interarrival_ms,
            text: text.clone(),
            tokens: tokenize(text),
            secrets,
            history: history.clone(),
        });
        history.push(n as u64);
    }
    let reuse = measure_reuse(requests.iter().map(|r| (r.user, &r.tokens)));
    Ok(Workload {
        spec: spec.clone(),
        requests,
        secrets: Vec::new(),
        reuse,
    })
}
