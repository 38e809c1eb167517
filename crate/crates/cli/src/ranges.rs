use chrono::NaiveDate;
use pgnn::data::SiteDataset;
use serde::{Deserialize, Serialize};

/// Inclusive run of dates at one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub site: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
}

/// Compact record of which site-days a set of per-site indices covers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DateRanges(pub Vec<DateRange>);

impl DateRanges {
    /// Runs of consecutive indices become one range each.
    pub fn from_indices(sites: &[SiteDataset], indices: &[Vec<usize>]) -> Self {
        let mut out = Vec::new();
        for (site, idx) in sites.iter().zip(indices) {
            let mut idx = idx.clone();
            idx.sort_unstable();
            let mut k = 0;
            while k < idx.len() {
                let start = k;
                while k + 1 < idx.len() && idx[k + 1] == idx[k] + 1 {
                    k += 1;
                }
                out.push(DateRange {
                    site: site.site_id.clone(),
                    from: site.records[idx[start]].date,
                    to: site.records[idx[k]].date,
                });
                k += 1;
            }
        }
        DateRanges(out)
    }

    pub fn contains(&self, site: &str, date: NaiveDate) -> bool {
        self.0.iter().any(|r| r.site == site && r.from <= date && date <= r.to)
    }

    /// Per-site indices of the records of `sites` inside the ranges.
    pub fn select(&self, sites: &[SiteDataset]) -> Vec<Vec<usize>> {
        sites
            .iter()
            .map(|s| {
                s.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| self.contains(&s.site_id, r.date))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }
}
