use std::fmt;

use super::MultiCorpus;

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageStats {
    pub language: String,
    pub present: usize,
    pub missing: usize,
}

impl LanguageStats {
    /// missing / (present + missing); 0 for an empty corpus.
    pub fn missing_fraction(&self) -> f64 {
        let total = self.present + self.missing;
        if total == 0 {
            0.0
        } else {
            self.missing as f64 / total as f64
        }
    }

    /// missing / present, the other reading of "in comparison with" the
    /// available sentences. `None` when nothing is present.
    pub fn missing_per_present(&self) -> Option<f64> {
        (self.present > 0).then(|| self.missing as f64 / self.present as f64)
    }
}

/// Per-language present/missing counts. ⟨NULL⟩-filled cells count as
/// missing.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub rows: usize,
    pub languages: Vec<LanguageStats>,
}

impl CorpusStats {
    pub fn of(corpus: &MultiCorpus) -> Self {
        let languages = corpus
            .languages()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let present = corpus.rows().iter().filter(|r| r.cells[i].is_usable()).count();
                LanguageStats {
                    language: l.clone(),
                    present,
                    missing: corpus.len() - present,
                }
            })
            .collect();
        CorpusStats {
            rows: corpus.len(),
            languages,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("language\tpresent\tmissing\tmissing_fraction\tmissing_per_present\n");
        for l in &self.languages {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                l.language,
                l.present,
                l.missing,
                l.missing_fraction(),
                l.missing_per_present().map_or("nan".to_string(), |f| format!("{f:.6}")),
            ));
        }
        out
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows: {}", self.rows)?;
        for l in &self.languages {
            write!(
                f,
                "{}: present {} missing {} ({:.1}% of all rows",
                l.language,
                l.present,
                l.missing,
                100.0 * l.missing_fraction()
            )?;
            match l.missing_per_present() {
                Some(r) => writeln!(f, ", {:.1}% of present)", 100.0 * r)?,
                None => writeln!(f, ")")?,
            }
        }
        Ok(())
    }
}
