//! Aggregation of human rating studies into per-group score tables.
//!
//! Input is a CSV with one row per (respondent, image) judgment. Scores are
//! first averaged per image, then summarized per group by the mean and
//! population standard deviation of those per-image means.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REQUIRED_COLUMNS: [&str; 8] = [
    "respondent_id",
    "image_id",
    "group",
    "interesting",
    "inspiring",
    "innovative",
    "overall",
    "attribution",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Real,
    Generated,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Real => "real",
            Group::Generated => "generated",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribution {
    Artist,
    Computer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Criterion {
    Interesting,
    Inspiring,
    Innovative,
    Overall,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Interesting,
        Criterion::Inspiring,
        Criterion::Innovative,
        Criterion::Overall,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Interesting => "Interesting",
            Criterion::Inspiring => "Inspiring",
            Criterion::Innovative => "Innovative",
            Criterion::Overall => "Overall",
        }
    }
}

/// One respondent's judgment of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub image_id: String,
    pub group: Group,
    /// Likert scores 1–5 in [`Criterion::ALL`] order.
    pub scores: [u8; 4],
    pub attribution: Attribution,
}

impl SurveyResponse {
    pub fn score(&self, c: Criterion) -> u8 {
        self.scores[c as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub criterion: String,
    pub real: MeanStd,
    pub generated: MeanStd,
}

/// Fraction of judgments answered "artist", per group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRates {
    pub real: f64,
    pub generated: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyCounts {
    pub respondents: usize,
    pub real_images: usize,
    pub generated_images: usize,
    pub real_judgments: usize,
    pub generated_judgments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub criteria: Vec<CriterionRow>,
    pub attribution: AttributionRates,
    pub counts: SurveyCounts,
}

fn parse_group(s: &str) -> Option<Group> {
    match s.trim().to_ascii_lowercase().as_str() {
        "real" => Some(Group::Real),
        "generated" => Some(Group::Generated),
        _ => None,
    }
}

fn parse_attribution(s: &str) -> Option<Attribution> {
    match s.trim().to_ascii_lowercase().as_str() {
        "artist" => Some(Attribution::Artist),
        "computer" => Some(Attribution::Computer),
        _ => None,
    }
}

/// Parses and validates responses. Row numbers in errors count the header as row 1.
pub fn parse_responses_from(reader: impl Read) -> Result<Vec<SurveyResponse>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("survey header: {e}")))?
        .clone();
    let mut index = [0usize; 8];
    for (slot, name) in index.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("survey file is missing column {name:?}")))?;
    }

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Validation {
            row,
            message: e.to_string(),
        })?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let invalid = |message: String| Error::Validation { row, message };

        let respondent_id = field(0).to_string();
        let image_id = field(1).to_string();
        if respondent_id.is_empty() || image_id.is_empty() {
            return Err(invalid("respondent_id and image_id must be non-empty".into()));
        }
        let group = parse_group(field(2))
            .ok_or_else(|| invalid(format!("unknown group {:?}", field(2))))?;
        let mut scores = [0u8; 4];
        for (c, s) in scores.iter_mut().enumerate() {
            let raw = field(3 + c);
            *s = raw
                .parse::<u8>()
                .ok()
                .filter(|v| (1..=5).contains(v))
                .ok_or_else(|| {
                    invalid(format!("{} score {raw:?} is not an integer 1-5", REQUIRED_COLUMNS[3 + c]))
                })?;
        }
        let attribution = parse_attribution(field(7))
            .ok_or_else(|| invalid(format!("unknown attribution {:?}", field(7))))?;

        if let Some(&g) = groups.get(&image_id) {
            if g != group {
                return Err(invalid(format!(
                    "image {image_id} listed as {group} but earlier as {g}"
                )));
            }
        } else {
            groups.insert(image_id.clone(), group);
        }
        if !seen.insert((respondent_id.clone(), image_id.clone())) {
            return Err(Error::Duplicate {
                row,
                respondent: respondent_id,
                image: image_id,
            });
        }
        out.push(SurveyResponse {
            respondent_id,
            image_id,
            group,
            scores,
            attribution,
        });
    }
    Ok(out)
}

pub fn parse_responses(path: &Path) -> Result<Vec<SurveyResponse>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_responses_from(file)
}

/// Fails unless every respondent judged every image.
pub fn check_complete(responses: &[SurveyResponse]) -> Result<()> {
    let respondents: BTreeSet<&str> = responses.iter().map(|r| r.respondent_id.as_str()).collect();
    let images: BTreeSet<&str> = responses.iter().map(|r| r.image_id.as_str()).collect();
    let expected = respondents.len() * images.len();
    if responses.len() == expected {
        return Ok(());
    }
    let have: BTreeSet<(&str, &str)> = responses
        .iter()
        .map(|r| (r.respondent_id.as_str(), r.image_id.as_str()))
        .collect();
    let missing = respondents
        .iter()
        .flat_map(|r| images.iter().map(move |i| (*r, *i)))
        .find(|p| !have.contains(p))
        .expect("fewer rows than pairs implies a missing pair");
    Err(Error::InsufficientSamples(format!(
        "{} of {expected} judgments missing, e.g. respondent {} on image {}; use --allow-partial to aggregate anyway",
        expected - responses.len(),
        missing.0,
        missing.1
    )))
}

/// Artist judgments over all judgments for `group`.
pub fn attribution_rate(responses: &[SurveyResponse], group: Group) -> Result<f64> {
    let (artist, total) = responses
        .iter()
        .filter(|r| r.group == group)
        .fold((0usize, 0usize), |(a, t), r| {
            (a + usize::from(r.attribution == Attribution::Artist), t + 1)
        });
    if total == 0 {
        return Err(Error::InsufficientSamples(format!("no judgments for the {group} group")));
    }
    Ok(artist as f64 / total as f64)
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Two-stage summary: per-image means, then per-group mean and population
/// std of those means.
pub fn aggregate(responses: &[SurveyResponse]) -> Result<CaseStudyReport> {
    // image -> (group, per-criterion score sums, judgment count)
    let mut images: BTreeMap<&str, (Group, [u64; 4], u64)> = BTreeMap::new();
    for r in responses {
        let e = images.entry(&r.image_id).or_insert((r.group, [0; 4], 0));
        for (s, &v) in e.1.iter_mut().zip(&r.scores) {
            *s += u64::from(v);
        }
        e.2 += 1;
    }
    let per_group = |g: Group| -> Result<Vec<[f64; 4]>> {
        let means: Vec<[f64; 4]> = images
            .values()
            .filter(|e| e.0 == g)
            .map(|(_, sums, n)| sums.map(|s| s as f64 / *n as f64))
            .collect();
        if means.is_empty() {
            return Err(Error::InsufficientSamples(format!("no images in the {g} group")));
        }
        Ok(means)
    };
    let real = per_group(Group::Real)?;
    let generated = per_group(Group::Generated)?;
    let column = |rows: &[[f64; 4]], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let criteria = Criterion::ALL
        .iter()
        .map(|&c| CriterionRow {
            criterion: c.label().to_string(),
            real: mean_std(&column(&real, c as usize)),
            generated: mean_std(&column(&generated, c as usize)),
        })
        .collect();
    let respondents: BTreeSet<&str> = responses.iter().map(|r| r.respondent_id.as_str()).collect();
    let judgments = |g: Group| responses.iter().filter(|r| r.group == g).count();
    Ok(CaseStudyReport {
        criteria,
        attribution: AttributionRates {
            real: attribution_rate(responses, Group::Real)?,
            generated: attribution_rate(responses, Group::Generated)?,
        },
        counts: SurveyCounts {
            respondents: respondents.len(),
            real_images: real.len(),
            generated_images: generated.len(),
            real_judgments: judgments(Group::Real),
            generated_judgments: judgments(Group::Generated),
        },
    })
}

impl CaseStudyReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("survey report: {e}")))
    }

    /// Score table (`mean ± std`, two decimals), then per-(criterion, group)
    /// bar data, then attribution percentages with one decimal.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Criterion,Real,Generated\n");
        for row in &self.criteria {
            s += &format!(
                "{},{:.2} ± {:.2},{:.2} ± {:.2}\n",
                row.criterion, row.real.mean, row.real.std, row.generated.mean, row.generated.std
            );
        }
        s += "\nCriterion,Group,Mean\n";
        for row in &self.criteria {
            s += &format!("{},real,{:.2}\n", row.criterion, row.real.mean);
            s += &format!("{},generated,{:.2}\n", row.criterion, row.generated.mean);
        }
        s += "\nGroup,Artist (%)\n";
        s += &format!("real,{:.1}\n", 100.0 * self.attribution.real);
        s += &format!("generated,{:.1}\n", 100.0 * self.attribution.generated);
        s
    }

    /// Writes `json_path` and a CSV with the same stem.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        let csv_path = json_path.with_extension("csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }
}

/// Parses, checks completeness unless `allow_partial`, and aggregates.
pub fn survey_report(path: &Path, allow_partial: bool) -> Result<CaseStudyReport> {
    let responses = parse_responses(path)?;
    if !allow_partial {
        check_complete(&responses)?;
    }
    aggregate(&responses)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "respondent_id,image_id,group,interesting,inspiring,innovative,overall,attribution\n";

    fn parse(body: &str) -> Result<Vec<SurveyResponse>> {
        parse_responses_from(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn well_formed_rows() {
        let r = parse("r1,a,real,1,2,3,4,artist\nr1,b,generated,5,5,5,5,computer\nr2,a,REAL,3,3,3,3,Computer\n").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].score(Criterion::Overall), 4);
        assert_eq!(r[2].group, Group::Real);
    }

    #[test]
    fn error_paths() {
        match parse("r1,a,real,1,1,1,1,artist\nr1,b,real,6,1,1,1,artist\n") {
            Err(Error::Validation { row: 3, message }) => assert!(message.contains("interesting")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("r1,img3,real,1,1,1,1,artist\nr1,img3,real,2,2,2,2,artist\n"),
            Err(Error::Duplicate { row: 3, .. })
        ));
        assert!(matches!(parse("r1,a,fake,1,1,1,1,artist\n"), Err(Error::Validation { row: 2, .. })));
        assert!(matches!(parse("r1,a,real,1,1,1,1,robot\n"), Err(Error::Validation { .. })));
        assert!(matches!(
            parse("r1,a,real,1,1,1,1,artist\nr2,a,generated,1,1,1,1,artist\n"),
            Err(Error::Validation { row: 3, .. })
        ));
        assert!(matches!(
            parse_responses_from("respondent_id,image_id,group\nr,a,real\n".as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn two_point_mean_and_population_std() {
        let r = parse(
            "r1,a,real,3,3,3,3,artist\nr1,b,real,4,4,4,4,computer\nr1,c,generated,2,2,2,2,computer\n",
        )
        .unwrap();
        let rep = aggregate(&r).unwrap();
        assert_eq!(rep.criteria[0].real, MeanStd { mean: 3.5, std: 0.5 });
        assert_eq!(rep.attribution.real, 0.5);
        assert_eq!(rep.attribution.generated, 0.0);
    }

    #[test]
    fn empty_group_and_incomplete_file() {
        let r = parse("r1,a,real,3,3,3,3,artist\n").unwrap();
        assert!(matches!(aggregate(&r), Err(Error::InsufficientSamples(_))));
        let r = parse("r1,a,real,3,3,3,3,artist\nr1,b,generated,3,3,3,3,artist\nr2,a,real,3,3,3,3,artist\n").unwrap();
        assert!(matches!(check_complete(&r), Err(Error::InsufficientSamples(_))));
        assert!(aggregate(&r).is_ok());
    }

    #[test]
    fn attribution_two_of_five() {
        let body: String = (0..5)
            .map(|i| format!("r{i},g,generated,3,3,3,3,{}\n", if i < 2 { "artist" } else { "computer" }))
            .collect();
        let r = parse(&body).unwrap();
        assert_eq!(attribution_rate(&r, Group::Generated).unwrap(), 0.4);
        assert!(attribution_rate(&r, Group::Real).is_err());
    }

    #[test]
    fn csv_layout_and_json_roundtrip() {
        let body: String = ["a", "b"]
            .iter()
            .zip([Group::Real, Group::Generated])
            .map(|(i, g)| format!("r1,{i},{g},3,3,3,3,artist\n"))
            .collect();
        let rep = aggregate(&parse(&body).unwrap()).unwrap();
        let csv = rep.to_csv();
        let blocks: Vec<&str> = csv.split("\n\n").collect();
        assert_eq!(blocks[0].lines().count(), 5);
        assert_eq!(blocks[1].lines().count(), 9);
        assert!(blocks[0].contains("Overall,3.00 ± 0.00,3.00 ± 0.00"));
        assert_eq!(CaseStudyReport::from_json(&rep.to_json().unwrap()).unwrap(), rep);
    }
}
