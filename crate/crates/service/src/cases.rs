//! Reading cases drawn from a manifest, with their hidden reference stages.

use std::collections::BTreeMap;
use std::path::Path;

use avn_core::phantom::Manifest;
use avn_core::{ImageF32, Stage};

/// A radiograph offered to readers. Never serialised to clients as a whole.
#[derive(Debug, Clone)]
pub struct Case {
    pub case_id: String,
    pub image: ImageF32,
    /// Most severe ground-truth stage on the radiograph.
    pub truth: Stage,
}

#[derive(Debug, Clone, Default)]
pub struct CaseLibrary {
    order: Vec<String>,
    cases: BTreeMap<String, Case>,
}

impl CaseLibrary {
    pub fn new(cases: Vec<Case>) -> Self {
        let order = cases.iter().map(|c| c.case_id.clone()).collect();
        Self { order, cases: cases.into_iter().map(|c| (c.case_id.clone(), c)).collect() }
    }

    /// One case per manifest image, identified by the image file stem.
    pub fn from_manifest(path: &Path) -> avn_core::Result<Self> {
        let m = Manifest::read(path)?;
        let mut cases = Vec::with_capacity(m.records.len());
        for r in &m.records {
            let case_id =
                Path::new(&r.image_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let truth = r.heads.iter().map(|h| h.stage).max().unwrap_or(Stage::Absence);
            cases.push(Case { case_id, image: m.load_image(r)?, truth });
        }
        Ok(Self::new(cases))
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.cases.get(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
