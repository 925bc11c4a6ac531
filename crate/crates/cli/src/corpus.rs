//! Corpus files: one CSV row per timestep (`t,ax,ay,az,mode`), windows are
//! consecutive 40-row groups.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use streamtune::fan_sim::{AXES, WINDOW_LEN};
use streamtune::{FanMode, StreamWindow};

use crate::CliError;

pub const CORPUS_HEADER: [&str; 5] = ["t", "ax", "ay", "az", "mode"];

pub fn write_corpus<I>(path: &Path, windows: I) -> Result<usize, CliError>
where
    I: IntoIterator<Item = StreamWindow>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = csv::Writer::from_writer(BufWriter::new(file));
    out.write_record(CORPUS_HEADER).map_err(|e| CliError::io(path, e))?;
    let mut count = 0;
    for w in windows {
        let mode = w
            .label
            .map(|l| FanMode::from_index(l).map(FanMode::name))
            .transpose()
            .map_err(|e| CliError::Data(e.to_string()))?
            .unwrap_or("");
        for (i, s) in w.samples.iter().enumerate() {
            let t = w.index * WINDOW_LEN as u64 + i as u64;
            out.write_record([t.to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string(), mode.to_string()])
                .map_err(|e| CliError::io(path, e))?;
        }
        count += 1;
    }
    out.flush().map_err(|e| CliError::io(path, e))?;
    Ok(count)
}

/// Reads windows one at a time; only the current 40 rows are held in memory.
pub struct CorpusReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<BufReader<File>>,
    next_window: u64,
    done: bool,
}

impl CorpusReader {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let headers = reader.headers().map_err(|e| CliError::io(path, e))?;
        if headers.iter().ne(CORPUS_HEADER) {
            return Err(CliError::Data(format!(
                "{}: expected header {}, found {}",
                path.display(),
                CORPUS_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        Ok(CorpusReader {
            path: path.to_path_buf(),
            records: reader.into_records(),
            next_window: 0,
            done: false,
        })
    }

    fn bad(&self, line: u64, msg: impl std::fmt::Display) -> CliError {
        CliError::Data(format!("{}:{line}: {msg}", self.path.display()))
    }

    fn read_window(&mut self) -> Result<Option<StreamWindow>, CliError> {
        let mut rows = Vec::with_capacity(WINDOW_LEN);
        let mut mode: Option<String> = None;
        let mut first_t = None;
        while rows.len() < WINDOW_LEN {
            let Some(record) = self.records.next() else {
                if rows.is_empty() {
                    return Ok(None);
                }
                return Err(CliError::Data(format!(
                    "{}: trailing partial window of {} rows",
                    self.path.display(),
                    rows.len()
                )));
            };
            let record = record.map_err(|e| CliError::io(&self.path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != CORPUS_HEADER.len() {
                return Err(self.bad(line, format!("expected 5 fields, found {}", record.len())));
            }
            let t: u64 = record[0].parse().map_err(|e| self.bad(line, e))?;
            first_t.get_or_insert(t);
            let mut sample = [0.0f32; AXES];
            for (a, v) in sample.iter_mut().enumerate() {
                *v = record[a + 1].parse().map_err(|e| self.bad(line, e))?;
            }
            match &mode {
                None => mode = Some(record[4].to_string()),
                Some(m) if m != &record[4] => {
                    return Err(self.bad(line, format!("mode changes inside a window ({m} to {})", &record[4])))
                }
                Some(_) => {}
            }
            rows.push(sample);
        }
        let label = match mode.as_deref() {
            None | Some("") => None,
            Some(name) => Some(
                FanMode::ALL
                    .iter()
                    .find(|m| m.name() == name)
                    .ok_or_else(|| CliError::Data(format!("{}: unknown mode {name:?}", self.path.display())))?
                    .index(),
            ),
        };
        let index = first_t.map_or(self.next_window, |t| t / WINDOW_LEN as u64);
        self.next_window += 1;
        StreamWindow::from_rows(&rows, label, index)
            .map(Some)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.path.display())))
    }
}

impl Iterator for CorpusReader {
    type Item = Result<StreamWindow, CliError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.read_window().transpose();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<StreamWindow>, CliError> {
    CorpusReader::open(path)?.collect()
}
