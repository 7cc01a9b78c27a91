use serde::{Deserialize, Serialize};

/// One scored prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    /// Predictive density of the observed response, or probability of the
    /// true class.
    pub density: f64,
    /// Squared error of the predictive mean (regression).
    pub sq_err: Option<f64>,
    /// Whether the most probable class was right (classification).
    pub correct: Option<bool>,
    /// Score for class 1, used for AUC (binary classification).
    pub score: Option<f64>,
    pub label: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub rmse: f64,
    pub mean_density: f64,
    pub ccr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub records: Vec<StepRecord>,
}

impl MetricTrace {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> MetricSummary {
        summarise(&self.records)
    }

    /// Aggregates over records with `from <= t < to`.
    pub fn window(&self, from: u64, to: u64) -> MetricSummary {
        let rs: Vec<StepRecord> = self
            .records
            .iter()
            .filter(|r| r.t >= from && r.t < to)
            .copied()
            .collect();
        summarise(&rs)
    }

    /// Header-bearing CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,density,sq_err,correct,score,label\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t,
                r.density,
                opt(r.sq_err),
                r.correct.map_or(String::new(), |c| u8::from(c).to_string()),
                opt(r.score),
                r.label.map_or(String::new(), |l| l.to_string()),
            ));
        }
        s
    }

    /// One JSON object per record.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialise"));
            s.push('\n');
        }
        s
    }
}

fn summarise(rs: &[StepRecord]) -> MetricSummary {
    let n = rs.len();
    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let sq: Vec<f64> = rs.iter().filter_map(|r| r.sq_err).collect();
    let rmse = mean(sq).sqrt();
    let mean_density = mean(rs.iter().map(|r| r.density).collect());
    let ccr = mean(
        rs.iter()
            .filter_map(|r| r.correct.map(|c| f64::from(u8::from(c))))
            .collect(),
    );
    let (scores, labels): (Vec<f64>, Vec<bool>) = rs
        .iter()
        .filter_map(|r| Some((r.score?, r.label? == 1)))
        .unzip();
    MetricSummary {
        n,
        rmse,
        mean_density,
        ccr,
        auc: auc(&scores, &labels),
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic with
/// midranks for ties. `NaN` when either class is absent.
pub fn auc(scores: &[f64], positive: &[bool]) -> f64 {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64)
}
