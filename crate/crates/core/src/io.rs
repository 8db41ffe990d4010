//! Element files and replayable element sources.
//!
//! An element file holds one `key,value` record per line: a UTF-8 key, a comma,
//! and a decimal value. The value is everything after the last comma, so keys
//! may themselves contain commas. Blank lines are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{Element, Key};
use crate::error::{Error, Result};

/// A source that can be iterated more than once with identical content.
pub trait ElementSource {
    fn try_for_each(&self, f: &mut dyn FnMut(&Element) -> Result<()>) -> Result<()>;
}

impl ElementSource for [Element] {
    fn try_for_each(&self, f: &mut dyn FnMut(&Element) -> Result<()>) -> Result<()> {
        self.iter().try_for_each(f)
    }
}

impl ElementSource for Vec<Element> {
    fn try_for_each(&self, f: &mut dyn FnMut(&Element) -> Result<()>) -> Result<()> {
        self.as_slice().try_for_each(f)
    }
}

/// Streams an element file from disk on every pass.
#[derive(Clone, Debug)]
pub struct ElementFile {
    path: PathBuf,
}

impl ElementFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ElementFile { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ElementSource for ElementFile {
    fn try_for_each(&self, f: &mut dyn FnMut(&Element) -> Result<()>) -> Result<()> {
        let reader = BufReader::new(File::open(&self.path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = parse_line(&line).map_err(|e| match e {
                Error::Format(m) | Error::RejectedElement(m) => {
                    Error::Format(format!("{}:{}: {m}", self.path.display(), lineno + 1))
                }
                other => other,
            })?;
            f(&e)?;
        }
        Ok(())
    }
}

pub fn parse_line(line: &str) -> Result<Element> {
    let (key, value) = line
        .rsplit_once(',')
        .ok_or_else(|| Error::Format(format!("expected key,value but got {line:?}")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad value {value:?}")))?;
    Element::new(Key::new(key.as_bytes())?, value)
}

pub fn read_elements(path: impl AsRef<Path>) -> Result<Vec<Element>> {
    let mut out = Vec::new();
    ElementFile::new(path.as_ref()).try_for_each(&mut |e| {
        out.push(e.clone());
        Ok(())
    })?;
    Ok(out)
}

pub fn write_elements<'a, I>(path: impl AsRef<Path>, elements: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Element>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for e in elements {
        // `{}` on f64 prints the shortest string that round-trips
        writeln!(w, "{},{}", e.key, e.value)?;
    }
    w.flush()?;
    Ok(())
}
