//! SQuAD v1.1 / v2.0 JSON reader.

use std::fs;
use std::path::Path;

use log::warn;
use readkit_core::text::{Answer, DataInstance};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SquadVersion {
    V1,
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub data: Vec<SquadArticle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadArticle {
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadParagraph {
    pub context: String,
    pub qas: Vec<SquadQa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadQa {
    pub question: String,
    pub id: String,
    #[serde(default)]
    pub answers: Vec<SquadAnswer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_impossible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

/// Instances read from one file, plus the questions that were dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadOutput {
    pub instances: Vec<DataInstance>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Anything that turns a dataset file into [`DataInstance`] values.
pub trait Reader {
    fn read_str(&self, text: &str, origin: &Path) -> Result<ReadOutput>;

    fn read(&self, path: &Path) -> Result<ReadOutput> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        self.read_str(&text, path)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SquadReader {
    pub version: SquadVersion,
}

impl Reader for SquadReader {
    fn read_str(&self, text: &str, origin: &Path) -> Result<ReadOutput> {
        let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::data(origin, e))?;
        Ok(self.convert(&file))
    }
}

impl SquadReader {
    /// One instance per question, labelled with its first answer. Questions
    /// whose answer cannot be aligned with the context are skipped.
    pub fn convert(&self, file: &SquadFile) -> ReadOutput {
        let mut out = ReadOutput::default();
        for para in file.data.iter().flat_map(|a| &a.paragraphs) {
            for qa in &para.qas {
                let impossible = self.version == SquadVersion::V2 && qa.is_impossible.unwrap_or(false);
                if !impossible && qa.answers.is_empty() {
                    out.skip(format!("question {} has no answers", qa.id));
                    continue;
                }
                let answers: Vec<Answer> = qa
                    .answers
                    .iter()
                    .map(|a| Answer {
                        text: a.text.clone(),
                        answer_start: a.answer_start,
                    })
                    .collect();
                match DataInstance::build(&qa.id, &para.context, &qa.question, &answers, impossible) {
                    Ok(inst) => out.instances.push(inst),
                    Err(e) => out.skip(format!("question {}: {e}", qa.id)),
                }
            }
        }
        out
    }
}

impl ReadOutput {
    fn skip(&mut self, msg: String) {
        warn!("skipping {msg}");
        self.skipped += 1;
        self.warnings.push(msg);
    }
}

pub fn read_squad(path: &Path, version: SquadVersion) -> Result<ReadOutput> {
    SquadReader { version }.read(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(json: &str, version: SquadVersion) -> ReadOutput {
        SquadReader { version }.read_str(json, Path::new("inline")).unwrap()
    }

    const V1: &str = r#"{"version": "1.1", "data": [{"title": "T", "paragraphs": [{
        "context": "The cat sat on the mat.",
        "qas": [{"id": "q1", "question": "Who sat?",
                 "answers": [{"text": "The cat", "answer_start": 0}, {"text": "cat", "answer_start": 4}]}]}]}]}"#;

    #[test]
    fn v1_fragment() {
        let out = read(V1, SquadVersion::V1);
        assert_eq!(out.skipped, 0);
        let inst = &out.instances[0];
        assert_eq!(inst.qid, "q1");
        assert_eq!(inst.span(), Some((0, 1)));
        assert_eq!(inst.gold_answers, ["The cat", "cat"]);
        assert!(!inst.is_impossible);
    }

    #[test]
    fn v2_impossible() {
        let json = r#"{"data": [{"paragraphs": [{"context": "Nothing here.",
            "qas": [{"id": "q", "question": "Why?", "answers": [], "is_impossible": true}]}]}]}"#;
        let out = read(json, SquadVersion::V2);
        assert_eq!(out.instances.len(), 1);
        assert!(out.instances[0].is_impossible);
        assert_eq!(out.instances[0].span(), None);
        let v1 = read(json, SquadVersion::V1);
        assert_eq!((v1.instances.len(), v1.skipped), (0, 1));
    }

    #[test]
    fn empty_data_and_bad_offsets() {
        assert!(read(r#"{"data": []}"#, SquadVersion::V1).instances.is_empty());
        let json = r#"{"data": [{"paragraphs": [{"context": "short",
            "qas": [{"id": "a", "question": "?", "answers": [{"text": "short", "answer_start": 3}]},
                    {"id": "b", "question": "?", "answers": [{"text": "short", "answer_start": 0}]}]}]}]}"#;
        let out = read(json, SquadVersion::V1);
        assert_eq!(out.skipped, 1);
        assert_eq!(out.instances.len(), 1);
        assert!(out.warnings[0].contains('a'));
    }

    #[test]
    fn malformed_json_names_path() {
        let err = SquadReader { version: SquadVersion::V1 }
            .read_str("{\"data\": [", Path::new("broken.json"))
            .unwrap_err();
        assert!(err.to_string().contains("broken.json"));
        assert_eq!(err.exit_code(), 3);
    }
}
