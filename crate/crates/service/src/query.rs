use std::str::FromStr;

use oir_core::pipeline::{records_to_csv, DiscoveredIntent, ResultRecord, Source};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::job::BatchJob;

pub const DEFAULT_LIMIT: usize = 100;
pub const MAX_LIMIT: usize = 1000;

/// Conjunctive result filters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultQuery {
    pub label: Option<String>,
    pub source: Option<Source>,
    pub min_confidence: Option<f64>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

impl ResultQuery {
    pub fn matches(&self, r: &ResultRecord) -> bool {
        self.label.as_ref().is_none_or(|l| &r.label == l)
            && self.source.is_none_or(|s| r.source == s)
            && self.min_confidence.is_none_or(|c| r.confidence >= c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub job_id: String,
    /// Matching records before paging.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub records: Vec<ResultRecord>,
}

/// Filter records (already in utterance id order) and cut one page. Limits
/// above the maximum are clamped to it.
pub fn query_results(job_id: &str, records: &[ResultRecord], q: &ResultQuery) -> Result<ResultPage, ServiceError> {
    if let Some(c) = q.min_confidence {
        if c.is_nan() {
            return Err(ServiceError::InvalidRequest("min_confidence is NaN".into()));
        }
    }
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let offset = q.offset.unwrap_or(0);
    let matching: Vec<&ResultRecord> = records.iter().filter(|r| q.matches(r)).collect();
    Ok(ResultPage {
        job_id: job_id.to_string(),
        total: matching.len(),
        offset,
        limit,
        records: matching.into_iter().skip(offset).take(limit).cloned().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(ServiceError::InvalidRequest(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub job: BatchJob,
    pub intents: Vec<DiscoveredIntent>,
    pub records: Vec<ResultRecord>,
}

pub fn render_report(
    format: ReportFormat,
    job: &BatchJob,
    intents: &[DiscoveredIntent],
    records: &[ResultRecord],
) -> String {
    match format {
        ReportFormat::Csv => records_to_csv(records),
        ReportFormat::Json => {
            let report = JsonReport {
                job: job.clone(),
                intents: intents.to_vec(),
                records: records.to_vec(),
            };
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str, confidence: f64, source: Source) -> ResultRecord {
        ResultRecord {
            job_id: "job-000001".into(),
            utterance_id: id.into(),
            text: "t".into(),
            label: label.into(),
            confidence,
            source,
            cluster_id: (source == Source::Discovered).then_some(0),
            distance: (source == Source::Detected).then_some(0.1),
        }
    }

    #[test]
    fn filters_and_paging() {
        let rs: Vec<ResultRecord> = (0..250)
            .map(|i| {
                let src = if i % 5 == 0 { Source::Discovered } else { Source::Detected };
                rec(&format!("u{i:03}"), if i % 2 == 0 { "a" } else { "b" }, i as f64 / 250.0, src)
            })
            .collect();
        let all = query_results("j", &rs, &ResultQuery::default()).unwrap();
        assert_eq!((all.total, all.limit, all.records.len()), (250, 100, 100));
        let q = ResultQuery {
            label: Some("a".into()),
            source: Some(Source::Discovered),
            ..Default::default()
        };
        let p = query_results("j", &rs, &q).unwrap();
        assert_eq!(p.total, 25);
        assert!(p.records.iter().all(|r| r.label == "a" && r.source == Source::Discovered));
        let q = ResultQuery {
            min_confidence: Some(1.1),
            ..Default::default()
        };
        assert!(query_results("j", &rs, &q).unwrap().records.is_empty());
        let q = ResultQuery {
            limit: Some(5000),
            offset: Some(240),
            ..Default::default()
        };
        let p = query_results("j", &rs, &q).unwrap();
        assert_eq!((p.limit, p.records.len()), (MAX_LIMIT, 10));
        assert_eq!(p, query_results("j", &rs, &q).unwrap());
    }

    #[test]
    fn one_record_csv_has_two_lines() {
        let csv = records_to_csv(&[rec("u1", "a", 0.5, Source::Detected)]);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), oir_core::pipeline::CSV_HEADER);
    }
}
