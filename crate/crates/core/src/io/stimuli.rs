//! Stimulus files: `{"trials":[{"id":..,"class":..,"words":[{"text":..,"box":[x0,y0,x1,y1]}]}]}`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionLabel, StimulusTrial, TrialId, Word, WordBox};

#[derive(Serialize, Deserialize)]
struct StimulusFile {
    trials: Vec<TrialDoc>,
}

#[derive(Serialize, Deserialize)]
struct TrialDoc {
    id: TrialId,
    class: ConditionLabel,
    words: Vec<WordDoc>,
}

#[derive(Serialize, Deserialize)]
struct WordDoc {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

pub fn read_stimuli(path: &Path) -> Result<Vec<StimulusTrial>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stimuli(&text).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_stimuli(text: &str) -> Result<Vec<StimulusTrial>> {
    let doc: StimulusFile =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("stimulus JSON: {e}")))?;
    let mut ids = BTreeSet::new();
    doc.trials
        .into_iter()
        .map(|t| {
            if !ids.insert(t.id) {
                return Err(Error::invalid(format!("duplicate trial id {}", t.id)));
            }
            let words = t
                .words
                .into_iter()
                .map(|w| {
                    let [x0, y0, x1, y1] = w.bbox;
                    let bbox = WordBox::new(x0, y0, x1, y1)
                        .map_err(|_| Error::invalid(format!("trial {}: degenerate box for word `{}`", t.id, w.text)))?;
                    Ok(Word { text: w.text, bbox })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StimulusTrial {
                id: t.id,
                class: t.class,
                words,
            })
        })
        .collect()
}

pub fn write_stimuli(trials: &[StimulusTrial], path: &Path) -> Result<()> {
    let doc = StimulusFile {
        trials: trials
            .iter()
            .map(|t| TrialDoc {
                id: t.id,
                class: t.class,
                words: t
                    .words
                    .iter()
                    .map(|w| WordDoc {
                        text: w.text.clone(),
                        bbox: [w.bbox.x_min, w.bbox.y_min, w.bbox.x_max, w.bbox.y_max],
                    })
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&doc).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
