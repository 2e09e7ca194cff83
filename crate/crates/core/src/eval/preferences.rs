//! Human preference matrix: summed Likert ratings per stimulus × response.

use std::path::Path;

use serde::Serialize;

use super::EvalError;

/// Response gestures offered to every stimulus.
pub const STANDARD_RESPONSES: [&str; 12] = [
    "wave hand",
    "thumb up",
    "clap hands",
    "shake hand",
    "thumb down",
    "raise hand",
    "point finger",
    "fist bump",
    "high five",
    "hug",
    "OK",
    "pat",
];

pub const DEFAULT_PARTICIPANTS: u32 = 14;
pub const LIKERT_MIN: u32 = 1;
pub const LIKERT_MAX: u32 = 5;

pub const TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceMatrix {
    stimuli: Vec<String>,
    responses: Vec<String>,
    /// `None` where a response was not offered for a stimulus.
    scores: Vec<Vec<Option<u32>>>,
    participants: u32,
}

impl PreferenceMatrix {
    pub fn new(
        stimuli: Vec<String>,
        responses: Vec<String>,
        scores: Vec<Vec<Option<u32>>>,
        participants: u32,
    ) -> Result<Self, EvalError> {
        let schema = |m: String| Err(EvalError::Schema(m));
        if participants == 0 {
            return schema("participant count must be positive".into());
        }
        if let Some(dup) = first_duplicate(&stimuli) {
            return schema(format!("duplicate stimulus label {dup:?}"));
        }
        if let Some(dup) = first_duplicate(&responses) {
            return schema(format!("duplicate response label {dup:?}"));
        }
        if scores.len() != stimuli.len() {
            return schema("score rows do not match stimuli".into());
        }
        let (lo, hi) = (participants * LIKERT_MIN, participants * LIKERT_MAX);
        for (stimulus, row) in stimuli.iter().zip(&scores) {
            if row.len() != responses.len() {
                return schema(format!("row {stimulus:?} has {} cells, expected {}", row.len(), responses.len()));
            }
            for (response, cell) in responses.iter().zip(row) {
                match cell {
                    None if STANDARD_RESPONSES.contains(&response.as_str()) => {
                        return schema(format!("{stimulus:?}: standard response {response:?} is blank"));
                    }
                    Some(v) if *v < lo || *v > hi => {
                        return Err(EvalError::Range {
                            stimulus: stimulus.clone(),
                            response: response.clone(),
                            value: *v,
                        });
                    }
                    _ => {}
                }
            }
            if row.iter().flatten().count() < TOP_K {
                return schema(format!("{stimulus:?} has fewer than {TOP_K} scored responses"));
            }
        }
        Ok(Self { stimuli, responses, scores, participants })
    }

    /// Parses the CSV layout: header row of response labels after a leading
    /// stimulus column, one row per stimulus, integer totals, blanks allowed
    /// in extra-response columns.
    pub fn from_csv_str(text: &str, participants: u32) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| EvalError::Schema(e.to_string()))?.clone();
        if headers.len() < 2 {
            return Err(EvalError::Schema("header needs a stimulus column and response labels".into()));
        }
        let responses: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        if responses.iter().any(|r| r.is_empty()) {
            return Err(EvalError::Schema("empty response label".into()));
        }
        let mut stimuli = Vec::new();
        let mut scores = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| EvalError::Schema(e.to_string()))?;
            let label = record.get(0).unwrap_or_default().to_string();
            if label.is_empty() {
                return Err(EvalError::Schema("empty stimulus label".into()));
            }
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<u32>()
                            .map(Some)
                            .map_err(|_| EvalError::Schema(format!("{label:?}: {cell:?} is not an integer total")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            stimuli.push(label);
            scores.push(row);
        }
        Self::new(stimuli, responses, scores, participants)
    }

    pub fn stimuli(&self) -> &[String] {
        &self.stimuli
    }

    pub fn responses(&self) -> &[String] {
        &self.responses
    }

    pub fn participants(&self) -> u32 {
        self.participants
    }

    fn row(&self, stimulus: &str) -> Result<&[Option<u32>], EvalError> {
        self.stimuli
            .iter()
            .position(|s| s == stimulus)
            .map(|i| self.scores[i].as_slice())
            .ok_or_else(|| EvalError::UnknownStimulus(stimulus.to_string()))
    }

    pub fn score(&self, stimulus: &str, response: &str) -> Result<Option<u32>, EvalError> {
        let row = self.row(stimulus)?;
        Ok(self.responses.iter().position(|r| r == response).and_then(|j| row[j]))
    }

    /// Responses offered for `stimulus`, in column order.
    pub fn offered_responses(&self, stimulus: &str) -> Result<Vec<String>, EvalError> {
        let row = self.row(stimulus)?;
        Ok(self
            .responses
            .iter()
            .zip(row)
            .filter(|(_, s)| s.is_some())
            .map(|(r, _)| r.clone())
            .collect())
    }

    /// Three highest-scored responses; ties go to the lexicographically
    /// smaller label.
    pub fn rank_human(&self, stimulus: &str) -> Result<Vec<String>, EvalError> {
        let row = self.row(stimulus)?;
        let mut scored: Vec<(&String, u32)> =
            self.responses.iter().zip(row).filter_map(|(r, s)| s.map(|s| (r, s))).collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(scored.into_iter().take(TOP_K).map(|(r, _)| r.clone()).collect())
    }
}

pub fn load_preferences(path: impl AsRef<Path>) -> Result<PreferenceMatrix, EvalError> {
    load_preferences_with(path, DEFAULT_PARTICIPANTS)
}

pub fn load_preferences_with(path: impl AsRef<Path>, participants: u32) -> Result<PreferenceMatrix, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    PreferenceMatrix::from_csv_str(&text, participants)
}

fn first_duplicate(labels: &[String]) -> Option<&String> {
    let mut seen = std::collections::HashSet::new();
    labels.iter().find(|l| !seen.insert(l.as_str()))
}
