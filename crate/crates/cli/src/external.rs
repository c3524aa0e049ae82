//! Model adapters used by `run`: an external trainer reached through shell
//! commands, and a wrapper that keeps every prediction file it sees.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::Command;

use spanqa_core::dataset::{export_squad, QADataset};
use spanqa_core::filter::{read_predictions, write_predictions, ModelAdapter, PredictionRecord};

/// Runs `sh -c` templates with `{dataset}`, `{predictions}` and
/// `{checkpoint}` replaced by paths under `work_dir`.
pub struct CommandAdapter {
    predict: String,
    fine_tune: String,
    work_dir: PathBuf,
    checkpoint: PathBuf,
    calls: usize,
}

impl CommandAdapter {
    pub fn new(predict: String, fine_tune: String, work_dir: PathBuf) -> Self {
        let checkpoint = work_dir.join("model.ckpt");
        CommandAdapter {
            predict,
            fine_tune,
            work_dir,
            checkpoint,
            calls: 0,
        }
    }

    fn expand(&self, template: &str, dataset: &Path, predictions: &Path) -> String {
        template
            .replace("{dataset}", &quote(dataset))
            .replace("{predictions}", &quote(predictions))
            .replace("{checkpoint}", &quote(&self.checkpoint))
    }

    fn stage(&mut self, kind: &str, data: &QADataset) -> Result<(PathBuf, PathBuf), String> {
        self.calls += 1;
        std::fs::create_dir_all(&self.work_dir).map_err(|e| e.to_string())?;
        let dataset = self.work_dir.join(format!("{:03}-{kind}.jsonl", self.calls));
        let predictions = self.work_dir.join(format!("{:03}-predictions.jsonl", self.calls));
        let file = File::create(&dataset).map_err(|e| e.to_string())?;
        export_squad(data, BufWriter::new(file), true).map_err(|e| e.to_string())?;
        Ok((dataset, predictions))
    }

    fn shell(&self, cmd: &str) -> Result<(), String> {
        log::info!("running {cmd}");
        let status = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .status()
            .map_err(|e| format!("could not start `{cmd}`: {e}"))?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("`{cmd}` exited with {status}"))
        }
    }
}

fn quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

impl ModelAdapter for CommandAdapter {
    fn fine_tune(&mut self, instances: &QADataset) -> Result<(), String> {
        let (dataset, predictions) = self.stage("train", instances)?;
        self.shell(&self.expand(&self.fine_tune, &dataset, &predictions))
    }

    fn predict(&mut self, instances: &QADataset) -> Result<Vec<PredictionRecord>, String> {
        let (dataset, predictions) = self.stage("predict", instances)?;
        self.shell(&self.expand(&self.predict, &dataset, &predictions))?;
        let file = File::open(&predictions).map_err(|e| format!("{}: {e}", predictions.display()))?;
        let by_id = read_predictions(BufReader::new(file)).map_err(|e| e.to_string())?;
        // Back into instance order; missing ids stay missing.
        Ok(instances
            .instances
            .iter()
            .filter_map(|i| by_id.get(&i.id).cloned())
            .collect())
    }

    fn checkpoint(&mut self, _label: &str) -> Result<Option<String>, String> {
        Ok(self.checkpoint.exists().then(|| self.checkpoint.display().to_string()))
    }
}

/// Passes everything through to `inner` and writes each round's
/// predictions to `dir/round-<k>.jsonl`.
pub struct RecordingAdapter<'a> {
    inner: &'a mut dyn ModelAdapter,
    dir: PathBuf,
    round: usize,
}

impl<'a> RecordingAdapter<'a> {
    pub fn new(inner: &'a mut dyn ModelAdapter, dir: PathBuf) -> Self {
        RecordingAdapter { inner, dir, round: 0 }
    }
}

impl ModelAdapter for RecordingAdapter<'_> {
    fn fine_tune(&mut self, instances: &QADataset) -> Result<(), String> {
        self.inner.fine_tune(instances)
    }

    fn predict(&mut self, instances: &QADataset) -> Result<Vec<PredictionRecord>, String> {
        self.round += 1;
        let preds = self.inner.predict(instances)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| e.to_string())?;
        let path = self.dir.join(format!("round-{}.jsonl", self.round));
        let file = File::create(&path).map_err(|e| e.to_string())?;
        write_predictions(&preds, BufWriter::new(file)).map_err(|e| e.to_string())?;
        Ok(preds)
    }

    fn checkpoint(&mut self, label: &str) -> Result<Option<String>, String> {
        self.inner.checkpoint(label)
    }
}
