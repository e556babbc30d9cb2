//! Event descriptions: the most frequent non-stop-word terms of the messages
//! inside an event window.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::detect::{EventWindow, OutlierBin};
use crate::time::{bin_start, BinSize, Timestamp};

pub const DEFAULT_TOP_N: usize = 10;

/// Lowercase word tokens of a short message. URLs and @-mentions are
/// dropped, a leading `#` is stripped from hashtags, and tokens shorter than
/// two characters are discarded. No stemming and no accent folding.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk.starts_with('@') || is_url(chunk) {
            continue;
        }
        let chunk = chunk.trim_start_matches('#');
        for word in chunk.split(|c: char| !c.is_alphanumeric()) {
            if word.chars().count() < 2 {
                continue;
            }
            out.push(word.to_lowercase());
        }
    }
    out
}

fn is_url(chunk: &str) -> bool {
    let head: String = chunk.chars().take(8).collect::<String>().to_ascii_lowercase();
    head.starts_with("http://") || head.starts_with("https://") || head.starts_with("www.")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StopwordList {
    terms: BTreeSet<String>,
    language: String,
}

impl StopwordList {
    pub fn new(language: impl Into<String>, terms: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        let mut list = StopwordList { terms: BTreeSet::new(), language: language.into() };
        for t in terms {
            list.insert(t.as_ref());
        }
        list
    }

    pub fn empty() -> Self {
        Self::default()
    }

    fn insert(&mut self, raw: &str) {
        for word in raw.split_whitespace() {
            self.terms.insert(word.to_lowercase());
        }
    }

    /// Parses the stopword file format: one term per line, `#` starts a
    /// comment.
    pub fn parse(language: impl Into<String>, text: &str) -> Self {
        let mut list = StopwordList { terms: BTreeSet::new(), language: language.into() };
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            list.insert(line);
        }
        list
    }

    /// The bundled list for a language tag (`en`, `pt`, `es`, `de`, `no`),
    /// merged with common short-message abbreviations. Unknown tags fall
    /// back to English.
    pub fn builtin(language: &str) -> Self {
        let words = match language {
            "pt" => PT,
            "es" => ES,
            "de" => DE,
            "no" => NO,
            _ => EN,
        };
        let tag = if matches!(language, "pt" | "es" | "de" | "no") { language } else { "en" };
        let mut list = Self::new(tag, words.split_whitespace());
        for w in SHORT_TEXT.split_whitespace() {
            list.insert(w);
        }
        list
    }

    /// Bundled list chosen by the country a place belongs to.
    pub fn for_country(country: Option<&str>) -> Self {
        Self::builtin(language_for_country(country))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }
}

pub fn language_for_country(country: Option<&str>) -> &'static str {
    let Some(c) = country else { return "en" };
    match c.trim().to_lowercase().as_str() {
        "br" | "brazil" | "brasil" | "pt" | "portugal" => "pt",
        "es" | "spain" | "españa" | "mx" | "mexico" | "méxico" | "ar" | "argentina" | "cl" | "chile" | "co"
        | "colombia" | "pe" | "peru" | "perú" => "es",
        "de" | "germany" | "deutschland" | "at" | "austria" | "österreich" => "de",
        "no" | "norway" | "norge" => "no",
        _ => "en",
    }
}

/// Terms ordered by descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TermRanking {
    entries: Vec<(String, u64)>,
}

impl TermRanking {
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

pub fn top_terms<S: AsRef<str>>(messages: &[S], stopwords: &StopwordList, n: usize) -> TermRanking {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for m in messages {
        for token in tokenize(m.as_ref()) {
            if !stopwords.contains(&token) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    // BTreeMap iteration is already term-ascending; a stable sort keeps it.
    entries.sort_by(|a, b| b.1.cmp(&a.1));
    entries.truncate(n.max(1));
    TermRanking { entries }
}

/// Buffered texts of one closed bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinTexts {
    pub bin_index: i64,
    pub texts: Vec<String>,
    pub sampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescribeWarning {
    /// Some bins of the window had no buffered texts.
    MissingBuffers,
    /// The window's bins held no messages at all.
    NoMessages,
}

impl DescribeWarning {
    pub fn as_str(self) -> &'static str {
        match self {
            DescribeWarning::MissingBuffers => "missing_buffers",
            DescribeWarning::NoMessages => "no_messages",
        }
    }
}

/// A described event window, ready for output.
#[derive(Debug, Clone, PartialEq)]
pub struct EventReport {
    pub place_id: String,
    pub place_name: String,
    pub start_bin: i64,
    pub end_bin: i64,
    /// Start of the first bin.
    pub start: Timestamp,
    /// End (exclusive) of the last bin.
    pub end: Timestamp,
    pub bin_size: BinSize,
    pub peak_score: f64,
    pub tweets_peak: f64,
    pub users_peak: f64,
    pub terms: TermRanking,
    pub outliers: Vec<OutlierBin>,
    pub warning: Option<DescribeWarning>,
}

/// Attaches the top terms of every message in the window's bins.
pub fn describe_event(
    window: &EventWindow,
    place_name: &str,
    buffers: &[BinTexts],
    stopwords: &StopwordList,
    top_n: usize,
    bin_size: BinSize,
    epoch: Timestamp,
) -> EventReport {
    let mut texts: Vec<&str> = Vec::new();
    let mut covered = 0i64;
    for b in buffers.iter().filter(|b| (window.start_bin..=window.end_bin).contains(&b.bin_index)) {
        covered += 1;
        texts.extend(b.texts.iter().map(String::as_str));
    }
    let expected = window.end_bin - window.start_bin + 1;
    let warning = if covered < expected {
        Some(DescribeWarning::MissingBuffers)
    } else if texts.is_empty() {
        Some(DescribeWarning::NoMessages)
    } else {
        None
    };
    let terms = top_terms(&texts, stopwords, top_n);
    let peak = |f: fn(&OutlierBin) -> f64| window.bins.iter().map(f).fold(0.0, f64::max);
    EventReport {
        place_id: window.place_id.clone(),
        place_name: place_name.to_string(),
        start_bin: window.start_bin,
        end_bin: window.end_bin,
        start: bin_start(window.start_bin, bin_size, epoch),
        end: bin_start(window.end_bin + 1, bin_size, epoch),
        bin_size,
        peak_score: window.peak_score,
        tweets_peak: peak(|b| b.tweets_observed),
        users_peak: peak(|b| b.users_observed),
        terms,
        outliers: window.bins.clone(),
        warning,
    }
}

const EN: &str = "a about above after again against all am an and any are as at be because been before being
below between both but by can could did do does doing down during each few for from further had has have
having he her here hers herself him himself his how i if in into is it its itself just me more most my myself
no nor not now of off on once only or other our ours ourselves out over own same she should so some such than
that the their theirs them themselves then there these they this those through to too under until up very was
we were what when where which while who whom why will with would you your yours yourself yourselves i'm it's
don't can't";

const PT: &str = "a à ao aos aquela aquelas aquele aqueles aquilo as às até com como da das de dela delas dele
deles depois do dos e é ela elas ele eles em entre era eram essa essas esse esses esta está estão estas este
estes eu foi foram há isso isto já la lhe lhes mais mas me mesmo meu meus minha minhas muito na nas não nem
no nos nós nossa nossas nosso nossos num numa o os ou para pela pelas pelo pelos por qual quando que quem se
sem ser seu seus só sua suas também te tem têm tu tua tuas um uma umas uns vai vou você vocês ta tá pra pro
tô";

const ES: &str = "a al algo algunas algunos ante antes como con contra cual cuando de del desde donde durante e
el él ella ellas ellos en entre era es esa esas ese eso esos esta está están estas este esto estos fue ha hay
la las le les lo los más me mi mis mucho muy nada ni no nos nosotros o os otra otro para pero poco por porque
que quien se sea ser si sí sin sobre su sus también te tiene todo tu tus un una uno unos y ya yo";

const DE: &str = "aber alle als also am an auch auf aus bei bin bis bist da dann das dass dem den der des die
dies diese dieser du durch ein eine einem einen einer es für hab habe hat hatte ich ihr im in ist ja kein
mich mir mit nach nicht noch nur ob oder sein sich sie sind so über um und uns von vor war was weil wenn wie
wir wird zu zum zur";

const NO: &str = "av at bare da de dei del den denne der det dette du eg ein eit eller en er et etter for fra
ha han hans har hun hva hvis hvor i ikke jeg kan med meg men min mitt må ned noe nå og om opp over på sa
seg skal som så til ut var vi vil ville";

const SHORT_TEXT: &str = "rt via lol lmao omg haha hahaha kkk kkkk kkkkk rs q vc vcs pq tb tbm blz hj aki aqui
eh ah oh ok né mt mto msm ja jah xd";

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn url_is_dropped() {
        assert_eq!(tokenize("Gol do Corinthians! http://t.co/x"), ["gol", "do", "corinthians"]);
    }

    #[test]
    fn mention_hashtag_and_length() {
        assert_eq!(tokenize("@maria #carnaval é HOJE"), ["carnaval", "hoje"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("HTTPS://EXAMPLE.com www.site.br Apuração"), ["apuração"]);
    }

    #[test]
    fn counts_and_ties() {
        let r = top_terms(&["gol gol corinthians", "gol jogo"], &StopwordList::empty(), 10);
        assert_eq!(
            r.entries(),
            [("gol".into(), 3), ("corinthians".into(), 1), ("jogo".into(), 1)]
        );
    }

    #[test]
    fn only_stopwords() {
        let sw = StopwordList::builtin("pt");
        assert!(top_terms(&["de que não", "para com uma"], &sw, 5).is_empty());
    }

    #[test]
    fn top_n_truncates() {
        let r = top_terms(&["aa bb cc dd aa"], &StopwordList::empty(), 2);
        assert_eq!(r.terms().collect::<Vec<_>>(), ["aa", "bb"]);
    }

    #[test]
    fn stopword_file_format() {
        let sw = StopwordList::parse("pt", "# comment\nDe\n  que  \n\nnão # trailing\n");
        assert_eq!(sw.iter().collect::<Vec<_>>(), ["de", "não", "que"]);
        assert!(sw.iter().all(|t| !t.contains(char::is_whitespace)));
    }

    #[test]
    fn country_selects_language() {
        assert_eq!(StopwordList::for_country(Some("Brazil")).language(), "pt");
        assert_eq!(StopwordList::for_country(Some("Norway")).language(), "no");
        assert_eq!(StopwordList::for_country(None).language(), "en");
        assert!(StopwordList::builtin("pt").contains("kkk"));
    }

    fn window(start: i64, end: i64) -> EventWindow {
        EventWindow { place_id: "sp".into(), start_bin: start, end_bin: end, peak_score: 4.0, bins: vec![] }
    }

    fn size() -> BinSize {
        BinSize::from_minutes(10).unwrap()
    }

    #[test]
    fn describe_window_over_buffers() {
        let buffers = vec![
            BinTexts { bin_index: 4, texts: vec!["gol gol corinthians".into()], sampled: false },
            BinTexts { bin_index: 5, texts: vec!["gol jogo".into()], sampled: false },
            BinTexts { bin_index: 6, texts: vec!["outra coisa".into()], sampled: false },
        ];
        let r = describe_event(&window(4, 5), "São Paulo", &buffers, &StopwordList::empty(), 10, size(), Timestamp(0));
        assert_eq!(r.terms.terms().next(), Some("gol"));
        assert_eq!(r.warning, None);
        assert_eq!(r.start, Timestamp(4 * 600_000));
        assert_eq!(r.end, Timestamp(6 * 600_000));

        let again = describe_event(&window(4, 5), "São Paulo", &buffers, &StopwordList::empty(), 10, size(), Timestamp(0));
        assert_eq!(again, r);
    }

    #[test]
    fn empty_and_missing_buffers() {
        let empty = vec![BinTexts { bin_index: 1, texts: vec![], sampled: false }];
        let r = describe_event(&window(1, 1), "x", &empty, &StopwordList::empty(), 10, size(), Timestamp(0));
        assert!(r.terms.is_empty());
        assert_eq!(r.warning, Some(DescribeWarning::NoMessages));

        let r = describe_event(&window(1, 2), "x", &empty, &StopwordList::empty(), 10, size(), Timestamp(0));
        assert_eq!(r.warning, Some(DescribeWarning::MissingBuffers));
    }
}
