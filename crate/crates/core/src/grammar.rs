//! The sentence fragment: lexicon, exhaustive enumeration and the oracle
//! interpreter that maps each sentence to its predicate-calculus form.
//!
//! Sentences come in three shapes:
//!
//! ```text
//! Name IVerb              ->  pred ( name )
//! Name TVerb Name         ->  pred ( name , name )
//! Name TVerb Reflexive    ->  pred ( name , name )     reflexive agrees with the subject
//! ```
//!
//! Logical-form symbols are lower-cased: entity symbols are the lower-cased
//! names and predicates are the bare verb lemmas.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HERSELF: &str = "herself";
pub const HIMSELF: &str = "himself";

const DEFAULT_FEMALE_NAMES: [&str; 15] = [
    "Alice", "Claire", "Eliza", "Grace", "Isla", "Mary", "Beth", "Donna", "Fiona", "Helen",
    "Jane", "Karen", "Laura", "Nina", "Olivia",
];

const DEFAULT_MALE_NAMES: [&str; 11] = [
    "John", "Bob", "Carl", "David", "Evan", "Frank", "George", "Henry", "Ian", "Kevin", "Liam",
];

const DEFAULT_INTRANSITIVE_VERBS: [(&str, &str); 8] = [
    ("runs", "run"),
    ("walks", "walk"),
    ("sleeps", "sleep"),
    ("swims", "swim"),
    ("laughs", "laugh"),
    ("smiles", "smile"),
    ("jumps", "jump"),
    ("sings", "sing"),
];

const DEFAULT_TRANSITIVE_VERBS: [(&str, &str); 7] = [
    ("sees", "see"),
    ("knows", "know"),
    ("likes", "like"),
    ("loves", "love"),
    ("helps", "help"),
    ("meets", "meet"),
    ("hears", "hear"),
];

pub const PAPER_FEMALE_COUNT: usize = 15;
pub const PAPER_MALE_COUNT: usize = 11;
pub const PAPER_INTRANSITIVE_COUNT: usize = 8;
pub const PAPER_TRANSITIVE_COUNT: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("lexicon configuration error: {0}")]
    Config(String),
    #[error("lexical error: unknown word `{0}`")]
    Lexical(String),
    #[error("syntactic error: {0}")]
    Syntactic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Feminine,
    Masculine,
}

impl Gender {
    pub fn reflexive(self) -> &'static str {
        match self {
            Gender::Feminine => HERSELF,
            Gender::Masculine => HIMSELF,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Feminine => "feminine",
            Gender::Masculine => "masculine",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sentence shape. The derive order is the enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Intransitive,
    Transitive,
    Reflexive,
}

impl Form {
    pub fn as_str(self) -> &'static str {
        match self {
            Form::Intransitive => "intransitive",
            Form::Transitive => "transitive",
            Form::Reflexive => "reflexive",
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub surface: String,
    pub predicate: String,
}

impl Verb {
    pub fn new(surface: &str, predicate: &str) -> Self {
        Verb { surface: surface.to_string(), predicate: predicate.to_string() }
    }
}

/// Optional replacements for the default word lists.
///
/// Replacing a list with one of a different length is rejected unless
/// `allow_nonstandard_counts` is set; such lexicons report
/// `is_paper_configuration() == false`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexiconOverrides {
    pub female_names: Option<Vec<String>>,
    pub male_names: Option<Vec<String>>,
    pub intransitive_verbs: Option<Vec<Verb>>,
    pub transitive_verbs: Option<Vec<Verb>>,
    #[serde(default)]
    pub allow_nonstandard_counts: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub female_names: Vec<String>,
    pub male_names: Vec<String>,
    pub intransitive_verbs: Vec<Verb>,
    pub transitive_verbs: Vec<Verb>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            female_names: DEFAULT_FEMALE_NAMES.iter().map(|s| s.to_string()).collect(),
            male_names: DEFAULT_MALE_NAMES.iter().map(|s| s.to_string()).collect(),
            intransitive_verbs: DEFAULT_INTRANSITIVE_VERBS.iter().map(|(s, p)| Verb::new(s, p)).collect(),
            transitive_verbs: DEFAULT_TRANSITIVE_VERBS.iter().map(|(s, p)| Verb::new(s, p)).collect(),
        }
    }
}

/// Builds the lexicon, applying `overrides` on top of the frozen defaults.
pub fn build_lexicon(overrides: Option<&LexiconOverrides>) -> Result<Lexicon, GrammarError> {
    let mut lexicon = Lexicon::default();
    let Some(o) = overrides else {
        return Ok(lexicon);
    };
    if let Some(v) = &o.female_names {
        lexicon.female_names = v.clone();
    }
    if let Some(v) = &o.male_names {
        lexicon.male_names = v.clone();
    }
    if let Some(v) = &o.intransitive_verbs {
        lexicon.intransitive_verbs = v.clone();
    }
    if let Some(v) = &o.transitive_verbs {
        lexicon.transitive_verbs = v.clone();
    }
    if !o.allow_nonstandard_counts && !lexicon.is_paper_configuration() {
        return Err(GrammarError::Config(format!(
            "category counts must be {PAPER_FEMALE_COUNT}/{PAPER_MALE_COUNT} names and \
             {PAPER_INTRANSITIVE_COUNT}/{PAPER_TRANSITIVE_COUNT} verbs \
             (got {}/{} and {}/{}); set allow_nonstandard_counts to change them",
            lexicon.female_names.len(),
            lexicon.male_names.len(),
            lexicon.intransitive_verbs.len(),
            lexicon.transitive_verbs.len()
        )));
    }
    lexicon.validate()?;
    Ok(lexicon)
}

impl Lexicon {
    /// True when the category sizes match the published setup.
    pub fn is_paper_configuration(&self) -> bool {
        self.female_names.len() == PAPER_FEMALE_COUNT
            && self.male_names.len() == PAPER_MALE_COUNT
            && self.intransitive_verbs.len() == PAPER_INTRANSITIVE_COUNT
            && self.transitive_verbs.len() == PAPER_TRANSITIVE_COUNT
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if self.female_names.is_empty() && self.male_names.is_empty() {
            return Err(GrammarError::Config("lexicon has no names".into()));
        }
        if self.intransitive_verbs.is_empty() && self.transitive_verbs.is_empty() {
            return Err(GrammarError::Config("lexicon has no verbs".into()));
        }
        let mut surfaces = HashSet::new();
        let words = self
            .names()
            .map(|(n, _)| n)
            .chain(self.intransitive_verbs.iter().map(|v| v.surface.as_str()))
            .chain(self.transitive_verbs.iter().map(|v| v.surface.as_str()))
            .chain([HERSELF, HIMSELF]);
        for w in words {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(GrammarError::Config(format!("invalid surface form `{w}`")));
            }
            if !surfaces.insert(w) {
                return Err(GrammarError::Config(format!("duplicate surface form `{w}`")));
            }
        }
        let mut symbols = HashSet::new();
        let preds = self
            .intransitive_verbs
            .iter()
            .chain(&self.transitive_verbs)
            .map(|v| v.predicate.clone())
            .chain(self.names().map(|(n, _)| entity_symbol(n)));
        for p in preds {
            if p.is_empty() || matches!(p.as_str(), "(" | ")" | ",") {
                return Err(GrammarError::Config(format!("invalid logical symbol `{p}`")));
            }
            if !symbols.insert(p.clone()) {
                return Err(GrammarError::Config(format!("duplicate logical symbol `{p}`")));
            }
        }
        Ok(())
    }

    /// All names with their gender, feminine first, each list in lexicon order.
    pub fn names(&self) -> impl Iterator<Item = (&str, Gender)> {
        self.female_names
            .iter()
            .map(|n| (n.as_str(), Gender::Feminine))
            .chain(self.male_names.iter().map(|n| (n.as_str(), Gender::Masculine)))
    }

    pub fn gender_of(&self, name: &str) -> Option<Gender> {
        self.names().find(|(n, _)| *n == name).map(|(_, g)| g)
    }

    pub fn names_of(&self, gender: Gender) -> &[String] {
        match gender {
            Gender::Feminine => &self.female_names,
            Gender::Masculine => &self.male_names,
        }
    }

    fn intransitive(&self, surface: &str) -> Option<&Verb> {
        self.intransitive_verbs.iter().find(|v| v.surface == surface)
    }

    fn transitive(&self, surface: &str) -> Option<&Verb> {
        self.transitive_verbs.iter().find(|v| v.surface == surface)
    }
}

/// Logical-form symbol for a name.
pub fn entity_symbol(name: &str) -> String {
    name.to_lowercase()
}

/// One sentence paired with its logical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    /// Position in the canonical enumeration order.
    pub id: usize,
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub form: Form,
    pub subject: String,
    /// Object name, the reflexive word, or `None` for intransitives.
    pub object: Option<String>,
    pub verb: String,
    pub subject_gender: Gender,
}

impl Example {
    pub fn source_text(&self) -> String {
        self.source.join(" ")
    }

    pub fn target_text(&self) -> String {
        self.target.join(" ")
    }

    /// The object name when the object is a proper name.
    pub fn object_name(&self) -> Option<&str> {
        match self.form {
            Form::Transitive => self.object.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub lexicon: Lexicon,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, form: Form) -> usize {
        self.examples.iter().filter(|e| e.form == form).count()
    }
}

fn sorted<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut v: Vec<&str> = items.collect();
    v.sort_unstable();
    v
}

/// Enumerates every sentence of the fragment exactly once, ordered by
/// form, then subject, verb and object (each lexicographic).
pub fn enumerate_sentences(lexicon: &Lexicon) -> Dataset {
    let names = sorted(lexicon.names().map(|(n, _)| n));
    let intransitive = sorted(lexicon.intransitive_verbs.iter().map(|v| v.surface.as_str()));
    let transitive = sorted(lexicon.transitive_verbs.iter().map(|v| v.surface.as_str()));

    let mut sources: Vec<Vec<&str>> = Vec::new();
    for &s in &names {
        for &v in &intransitive {
            sources.push(vec![s, v]);
        }
    }
    for &s in &names {
        for &v in &transitive {
            for &o in &names {
                sources.push(vec![s, v, o]);
            }
        }
    }
    for &s in &names {
        let gender = lexicon.gender_of(s).expect("enumerated name is in the lexicon");
        for &v in &transitive {
            sources.push(vec![s, v, gender.reflexive()]);
        }
    }

    let examples = sources
        .into_iter()
        .enumerate()
        .map(|(id, src)| {
            let source: Vec<String> = src.iter().map(|s| s.to_string()).collect();
            parse(&source, lexicon)
                .map(|mut e| {
                    e.id = id;
                    e
                })
                .expect("enumerated sentence is grammatical")
        })
        .collect();
    Dataset { examples, lexicon: lexicon.clone() }
}

/// Parses a source sentence into a fully described example (id 0).
pub fn parse(source: &[String], lexicon: &Lexicon) -> Result<Example, GrammarError> {
    let (subject, rest) = source
        .split_first()
        .ok_or_else(|| GrammarError::Syntactic("empty sentence".into()))?;
    let subject_gender = lexicon.gender_of(subject).ok_or_else(|| {
        if is_known_word(subject, lexicon) {
            GrammarError::Syntactic(format!("`{subject}` cannot be a subject"))
        } else {
            GrammarError::Lexical(subject.clone())
        }
    })?;
    let subj = entity_symbol(subject);
    let verb = rest
        .first()
        .ok_or_else(|| GrammarError::Syntactic("missing verb".into()))?;

    let mut example = Example {
        id: 0,
        source: source.to_vec(),
        target: Vec::new(),
        form: Form::Intransitive,
        subject: subject.clone(),
        object: None,
        verb: verb.clone(),
        subject_gender,
    };

    if let Some(v) = lexicon.intransitive(verb) {
        if rest.len() != 1 {
            return Err(GrammarError::Syntactic(format!(
                "intransitive verb `{verb}` takes no object"
            )));
        }
        example.target = lf(&v.predicate, &[&subj]);
        return Ok(example);
    }
    let v = lexicon.transitive(verb).ok_or_else(|| {
        if is_known_word(verb, lexicon) {
            GrammarError::Syntactic(format!("`{verb}` is not a verb"))
        } else {
            GrammarError::Lexical(verb.clone())
        }
    })?;
    let object = match rest {
        [_, o] => o,
        [_] => {
            return Err(GrammarError::Syntactic(format!(
                "transitive verb `{verb}` requires an object"
            )))
        }
        _ => return Err(GrammarError::Syntactic("too many words".into())),
    };
    example.object = Some(object.clone());
    if object == HERSELF || object == HIMSELF {
        if object != subject_gender.reflexive() {
            return Err(GrammarError::Syntactic(format!(
                "reflexive `{object}` does not agree with {subject_gender} subject `{subject}`"
            )));
        }
        example.form = Form::Reflexive;
        example.target = lf(&v.predicate, &[&subj, &subj]);
    } else if lexicon.gender_of(object).is_some() {
        example.form = Form::Transitive;
        example.target = lf(&v.predicate, &[&subj, &entity_symbol(object)]);
    } else if is_known_word(object, lexicon) {
        return Err(GrammarError::Syntactic(format!("`{object}` cannot be an object")));
    } else {
        return Err(GrammarError::Lexical(object.clone()));
    }
    Ok(example)
}

/// Oracle interpretation of a source sentence.
pub fn interpret(source: &[String], lexicon: &Lexicon) -> Result<Vec<String>, GrammarError> {
    parse(source, lexicon).map(|e| e.target)
}

fn is_known_word(word: &str, lexicon: &Lexicon) -> bool {
    word == HERSELF
        || word == HIMSELF
        || lexicon.gender_of(word).is_some()
        || lexicon.intransitive(word).is_some()
        || lexicon.transitive(word).is_some()
}

fn lf(predicate: &str, args: &[&str]) -> Vec<String> {
    let mut out = vec![predicate.to_string(), "(".to_string()];
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push(",".to_string());
        }
        out.push(a.to_string());
    }
    out.push(")".to_string());
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// Source length does not fit the example's form.
    SourceShape(String),
    /// Target is not `pred ( e )` / `pred ( e , e )` or its parentheses are unbalanced.
    TargetShape(String),
    /// Reflexive gender or argument identity is violated.
    Agreement(String),
    /// Metadata disagrees with the sentence.
    Metadata(String),
    /// The oracle rejects the source sentence.
    Ungrammatical(GrammarError),
    /// The oracle's logical form differs from the stored target.
    Mismatch { expected: Vec<String>, found: Vec<String> },
}

/// Checks every structural invariant of `example` and compares its target
/// with the oracle. An empty result means the example is well formed.
pub fn validate_example(example: &Example, lexicon: &Lexicon) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let expected_src = match example.form {
        Form::Intransitive => 2,
        Form::Transitive | Form::Reflexive => 3,
    };
    if example.source.len() != expected_src {
        diags.push(Diagnostic::SourceShape(format!(
            "{} form needs {expected_src} source tokens, found {}",
            example.form,
            example.source.len()
        )));
    }

    let t = &example.target;
    let mut depth = 0i32;
    let mut balanced = true;
    for tok in t {
        match tok.as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    balanced = false;
                }
            }
            _ => {}
        }
    }
    if depth != 0 || !balanced {
        diags.push(Diagnostic::TargetShape("unbalanced parentheses".into()));
    }
    let arity = match example.form {
        Form::Intransitive => 1,
        _ => 2,
    };
    let shape_ok = match arity {
        1 => t.len() == 4 && t[1] == "(" && t[3] == ")",
        _ => t.len() == 6 && t[1] == "(" && t[3] == "," && t[5] == ")",
    };
    if !shape_ok {
        diags.push(Diagnostic::TargetShape(format!(
            "expected a {arity}-place predicate form, found `{}`",
            t.join(" ")
        )));
    }

    if example.form == Form::Reflexive {
        if example.object.as_deref() != Some(example.subject_gender.reflexive()) {
            diags.push(Diagnostic::Agreement(format!(
                "reflexive object {:?} does not match {} subject",
                example.object, example.subject_gender
            )));
        }
        if shape_ok && (t[2] != t[4] || t[2] != entity_symbol(&example.subject)) {
            diags.push(Diagnostic::Agreement(
                "reflexive arguments must both equal the subject".into(),
            ));
        }
    }

    match parse(&example.source, lexicon) {
        Ok(parsed) => {
            if parsed.form != example.form
                || parsed.subject != example.subject
                || parsed.object != example.object
                || parsed.verb != example.verb
                || parsed.subject_gender != example.subject_gender
            {
                diags.push(Diagnostic::Metadata(
                    "form/subject/object/verb/gender disagree with the sentence".into(),
                ));
            }
            if parsed.target != example.target {
                diags.push(Diagnostic::Mismatch {
                    expected: parsed.target,
                    found: example.target.clone(),
                });
            }
        }
        Err(e) => diags.push(Diagnostic::Ungrammatical(e)),
    }
    diags
}

/// One line of the JSONL dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub source: String,
    pub target: String,
    pub form: Form,
    pub subject: String,
    pub verb: String,
    pub object: Option<String>,
    pub gender: Gender,
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        ExampleRecord {
            source: e.source_text(),
            target: e.target_text(),
            form: e.form,
            subject: e.subject.clone(),
            verb: e.verb.clone(),
            object: e.object.clone(),
            gender: e.subject_gender,
        }
    }
}

impl ExampleRecord {
    pub fn into_example(self, id: usize) -> Example {
        Example {
            id,
            source: self.source.split_whitespace().map(String::from).collect(),
            target: self.target.split_whitespace().map(String::from).collect(),
            form: self.form,
            subject: self.subject,
            object: self.object,
            verb: self.verb,
            subject_gender: self.gender,
        }
    }
}

/// Serializes examples as JSONL (LF endings, trailing newline).
pub fn to_jsonl<'a>(examples: impl IntoIterator<Item = &'a Example>) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(&ExampleRecord::from(e)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<Example>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str::<ExampleRecord>(l).map(|r| r.into_example(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn default_lexicon_counts() {
        let lex = build_lexicon(None).unwrap();
        assert_eq!(lex.female_names.len(), 15);
        assert_eq!(lex.male_names.len(), 11);
        assert_eq!(lex.intransitive_verbs.len(), 8);
        assert_eq!(lex.transitive_verbs.len(), 7);
        for n in ["Alice", "Claire", "Eliza", "Grace", "Isla", "Mary"] {
            assert_eq!(lex.gender_of(n), Some(Gender::Feminine), "{n}");
        }
        for n in ["John", "Bob"] {
            assert_eq!(lex.gender_of(n), Some(Gender::Masculine), "{n}");
        }
        assert!(lex.intransitive_verbs.contains(&Verb::new("runs", "run")));
        assert!(lex.transitive_verbs.contains(&Verb::new("sees", "see")));
        assert!(lex.is_paper_configuration());
        lex.validate().unwrap();
    }

    #[test]
    fn zero_female_names_is_rejected() {
        let o = LexiconOverrides { female_names: Some(vec![]), ..Default::default() };
        assert!(matches!(build_lexicon(Some(&o)), Err(GrammarError::Config(_))));
    }

    #[test]
    fn duplicate_surface_is_rejected() {
        let mut males: Vec<String> = DEFAULT_MALE_NAMES.iter().map(|s| s.to_string()).collect();
        males[0] = "Alice".into();
        let o = LexiconOverrides { male_names: Some(males), ..Default::default() };
        assert!(matches!(build_lexicon(Some(&o)), Err(GrammarError::Config(_))));

        let o = LexiconOverrides {
            intransitive_verbs: Some(vec![Verb::new("sees", "gaze")]),
            allow_nonstandard_counts: true,
            ..Default::default()
        };
        assert!(matches!(build_lexicon(Some(&o)), Err(GrammarError::Config(_))));
    }

    #[test]
    fn enumeration_counts() {
        let ds = enumerate_sentences(&Lexicon::default());
        assert_eq!(ds.len(), 5122);
        assert_eq!(ds.count(Form::Intransitive), 26 * 8);
        assert_eq!(ds.count(Form::Transitive), 26 * 7 * 26);
        assert_eq!(ds.count(Form::Reflexive), 26 * 7);
        let distinct: HashSet<_> = ds.examples.iter().map(|e| e.source.clone()).collect();
        assert_eq!(distinct.len(), 5122);
        for (i, e) in ds.examples.iter().enumerate() {
            assert_eq!(e.id, i);
        }
    }

    #[test]
    fn minimal_lexicon_enumeration() {
        let o = LexiconOverrides {
            female_names: Some(vec!["Alice".into()]),
            male_names: Some(vec![]),
            intransitive_verbs: Some(vec![]),
            transitive_verbs: Some(vec![Verb::new("sees", "see")]),
            allow_nonstandard_counts: true,
        };
        let lex = build_lexicon(Some(&o)).unwrap();
        assert!(!lex.is_paper_configuration());
        let ds = enumerate_sentences(&lex);
        let srcs: Vec<String> = ds.examples.iter().map(Example::source_text).collect();
        assert_eq!(srcs, ["Alice sees Alice", "Alice sees herself"]);
    }

    #[test]
    fn interpret_examples() {
        let lex = Lexicon::default();
        assert_eq!(interpret(&toks("Mary runs"), &lex).unwrap(), toks("run ( mary )"));
        assert_eq!(interpret(&toks("John sees Bob"), &lex).unwrap(), toks("see ( john , bob )"));
        assert_eq!(
            interpret(&toks("Mary sees herself"), &lex).unwrap(),
            toks("see ( mary , mary )")
        );
        assert!(matches!(
            interpret(&toks("John sees herself"), &lex),
            Err(GrammarError::Syntactic(_))
        ));
    }

    #[test]
    fn interpret_errors() {
        let lex = Lexicon::default();
        assert!(matches!(interpret(&toks("Zed runs"), &lex), Err(GrammarError::Lexical(_))));
        assert!(matches!(interpret(&toks("Mary flies"), &lex), Err(GrammarError::Lexical(_))));
        assert!(matches!(interpret(&toks("Mary runs Bob"), &lex), Err(GrammarError::Syntactic(_))));
        assert!(matches!(interpret(&toks("Mary sees"), &lex), Err(GrammarError::Syntactic(_))));
        assert!(matches!(interpret(&toks("herself sees Mary"), &lex), Err(GrammarError::Syntactic(_))));
        assert!(matches!(interpret(&toks("Mary sees runs"), &lex), Err(GrammarError::Syntactic(_))));
        assert!(matches!(interpret(&[], &lex), Err(GrammarError::Syntactic(_))));
    }

    #[test]
    fn validate_detects_problems() {
        let lex = Lexicon::default();
        let ds = enumerate_sentences(&lex);
        for e in &ds.examples {
            assert!(validate_example(e, &lex).is_empty(), "{}", e.source_text());
        }
        let mut e = parse(&toks("Mary sees herself"), &lex).unwrap();
        e.target = toks("see ( mary , bob )");
        let d = validate_example(&e, &lex);
        assert!(d.iter().any(|d| matches!(d, Diagnostic::Mismatch { .. })));

        let mut e = parse(&toks("Mary runs"), &lex).unwrap();
        e.target = toks("run ( mary");
        let d = validate_example(&e, &lex);
        assert!(d.iter().any(|d| matches!(d, Diagnostic::TargetShape(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = enumerate_sentences(&Lexicon::default());
        let text = to_jsonl(&ds.examples[..50]);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let back = from_jsonl(&text).unwrap();
        assert_eq!(back, ds.examples[..50].to_vec());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["source", "target", "form", "subject", "verb", "object", "gender"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }
}
