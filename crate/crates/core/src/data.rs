//! Sparse rating data: parsing, per-entity adjacency, and seeded splitting.
//!
//! A dataset is a list of observed `(user, item, rating)` triples over a fixed
//! entity universe. Two CSR views are kept next to the entry list: `by_user`
//! holds each user's observed items and `by_item` each item's observed users,
//! both sorted ascending by counterpart index. Every blockwise formula in the
//! crate iterates these lists, so their order fixes floating-point reduction
//! order everywhere.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Field separator for delimited rating files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Picks `::`, tab, comma, or whitespace per line, in that order.
    #[default]
    Auto,
    Comma,
    Tab,
    Whitespace,
    DoubleColon,
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::DoubleColon => line.split("::").map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Auto => {
                let resolved = if line.contains("::") {
                    Delimiter::DoubleColon
                } else if line.contains('\t') {
                    Delimiter::Tab
                } else if line.contains(',') {
                    Delimiter::Comma
                } else {
                    Delimiter::Whitespace
                };
                resolved.split(line)
            }
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Comma),
            "tab" | "\t" | "\\t" => Ok(Delimiter::Tab),
            "whitespace" | "space" | " " => Ok(Delimiter::Whitespace),
            "::" | "double-colon" => Ok(Delimiter::DoubleColon),
            other => Err(Error::Config(format!("unknown delimiter {other:?}"))),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Delimiter::Auto => "auto",
            Delimiter::Comma => "comma",
            Delimiter::Tab => "tab",
            Delimiter::Whitespace => "whitespace",
            Delimiter::DoubleColon => "::",
        })
    }
}

/// One bidirectional map between external ID tokens and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&idx) = self.index.get(token) {
            return idx;
        }
        let idx = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), idx);
        idx
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn sequential(n: usize) -> Self {
        let mut map = IdMap::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

/// A rating line before ID remapping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub line: usize,
}

/// Compressed adjacency: for entity `e`, `neighbors[offsets[e]..offsets[e + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    ratings: Vec<f64>,
}

impl Adjacency {
    fn build(count: usize, pairs: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for (owner, other, rating) in pairs {
            rows[owner].push((other, rating));
        }
        let mut offsets = Vec::with_capacity(count + 1);
        let total = rows.iter().map(Vec::len).sum();
        let mut neighbors = Vec::with_capacity(total);
        let mut ratings = Vec::with_capacity(total);
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(other, _)| other);
            for (other, rating) in row {
                neighbors.push(other);
                ratings.push(rating);
            }
            offsets.push(neighbors.len());
        }
        Adjacency {
            offsets,
            neighbors,
            ratings,
        }
    }

    /// Counterpart indices and ratings of entity `e`, ascending by counterpart.
    #[inline]
    pub fn row(&self, e: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.offsets[e], self.offsets[e + 1]);
        (&self.neighbors[lo..hi], &self.ratings[lo..hi])
    }

    #[inline]
    pub fn degree(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }
}

/// An immutable high-dimensional incomplete rating matrix.
#[derive(Debug, Clone)]
pub struct HdiDataset {
    num_users: usize,
    num_items: usize,
    entries: Vec<RatingTriple>,
    by_user: Adjacency,
    by_item: Adjacency,
    ids: Arc<IdMaps>,
}

impl PartialEq for HdiDataset {
    fn eq(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.entries == other.entries
            && self.by_user == other.by_user
            && self.by_item == other.by_item
            && *self.ids == *other.ids
    }
}

impl HdiDataset {
    /// Builds a dataset from already-indexed triples. Duplicate `(user, item)`
    /// pairs keep the position of the first occurrence and the rating of the last.
    /// External IDs are the decimal indices.
    pub fn from_triples(
        num_users: usize,
        num_items: usize,
        triples: impl IntoIterator<Item = RatingTriple>,
    ) -> Result<Self> {
        let ids = IdMaps {
            users: IdMap::sequential(num_users),
            items: IdMap::sequential(num_items),
        };
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for t in triples {
            if t.user >= num_users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: t.user,
                    limit: num_users,
                });
            }
            if t.item >= num_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: t.item,
                    limit: num_items,
                });
            }
            if !t.rating.is_finite() {
                return Err(Error::NonFiniteRating {
                    line: entries.len() + 1,
                    value: t.rating,
                });
            }
            push_dedup(&mut entries, &mut seen, t);
        }
        Ok(Self::assemble(num_users, num_items, entries, Arc::new(ids)))
    }

    fn assemble(num_users: usize, num_items: usize, entries: Vec<RatingTriple>, ids: Arc<IdMaps>) -> Self {
        let by_user = Adjacency::build(num_users, entries.iter().map(|t| (t.user, t.item, t.rating)));
        let by_item = Adjacency::build(num_items, entries.iter().map(|t| (t.item, t.user, t.rating)));
        HdiDataset {
            num_users,
            num_items,
            entries,
            by_user,
            by_item,
            ids,
        }
    }

    /// A dataset over the same entity universe holding only `entries`.
    pub fn with_entries(&self, entries: Vec<RatingTriple>) -> Self {
        Self::assemble(self.num_users, self.num_items, entries, Arc::clone(&self.ids))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn entries(&self) -> &[RatingTriple] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_user(&self) -> &Adjacency {
        &self.by_user
    }

    pub fn by_item(&self) -> &Adjacency {
        &self.by_item
    }

    pub fn ids(&self) -> &IdMaps {
        &self.ids
    }

    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Writes `user<TAB>item<TAB>rating` lines in entry order using external IDs.
    pub fn write_canonical<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.entries {
            let user = self.ids.users.token(t.user).unwrap_or_default();
            let item = self.ids.items.token(t.item).unwrap_or_default();
            writeln!(out, "{user}\t{item}\t{}", t.rating)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn push_dedup(entries: &mut Vec<RatingTriple>, seen: &mut HashMap<(usize, usize), usize>, t: RatingTriple) {
    match seen.get(&(t.user, t.item)) {
        Some(&pos) => entries[pos].rating = t.rating,
        None => {
            seen.insert((t.user, t.item), entries.len());
            entries.push(t);
        }
    }
}

/// Reads rating records without remapping IDs. `#` lines and blank lines are skipped.
pub fn parse_records<R: BufRead>(source: R, delimiter: Delimiter) -> Result<Vec<RawRating>> {
    let mut records = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = delimiter.split(trimmed);
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                reason: "empty user or item token".into(),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            reason: format!("rating {:?} is not a number", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::NonFiniteRating {
                line: line_no,
                value: rating,
            });
        }
        records.push(RawRating {
            user: fields[0].to_owned(),
            item: fields[1].to_owned(),
            rating,
            line: line_no,
        });
    }
    Ok(records)
}

/// Parses one rating file into a dataset whose universe is the IDs it mentions.
pub fn parse_ratings<R: BufRead>(source: R, delimiter: Delimiter) -> Result<HdiDataset> {
    let records = parse_records(source, delimiter)?;
    let mut parts = build_aligned(vec![records])?;
    Ok(parts.remove(0))
}

/// Remaps several record sets against one shared entity universe, interning IDs
/// in set order. Each set is deduplicated independently.
pub fn build_aligned(sets: Vec<Vec<RawRating>>) -> Result<Vec<HdiDataset>> {
    if sets.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput);
    }
    let mut ids = IdMaps::default();
    let mut per_set = Vec::with_capacity(sets.len());
    for records in &sets {
        let mut entries = Vec::with_capacity(records.len());
        let mut seen = HashMap::with_capacity(records.len());
        for rec in records {
            let t = RatingTriple {
                user: ids.users.intern(&rec.user),
                item: ids.items.intern(&rec.item),
                rating: rec.rating,
            };
            push_dedup(&mut entries, &mut seen, t);
        }
        per_set.push(entries);
    }
    let (num_users, num_items) = (ids.users.len(), ids.items.len());
    let ids = Arc::new(ids);
    Ok(per_set
        .into_iter()
        .map(|entries| HdiDataset::assemble(num_users, num_items, entries, Arc::clone(&ids)))
        .collect())
}

/// Part sizes for `n` entries: largest-remainder rounding, then every part is
/// topped up to at least one entry by taking from the largest part.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    validate_ratios(ratios)?;
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 entries to split, found {n}")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // Stable sort keeps ties in part order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    for k in 0..3 {
        if sizes[k] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[k] = 1;
        }
    }
    Ok(sizes)
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Shuffles the entries with a seeded ChaCha8 stream and cuts them into
/// train/validation/test parts. All parts keep the full entity universe.
pub fn split_dataset(data: &HdiDataset, ratios: [f64; 3], seed: u64) -> Result<(HdiDataset, HdiDataset, HdiDataset)> {
    let [n_train, n_val, _] = split_sizes(data.len(), ratios)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| data.with_entries(idx.iter().map(|&k| data.entries[k]).collect());
    let train = pick(&order[..n_train]);
    let val = pick(&order[n_train..n_train + n_val]);
    let test = pick(&order[n_train + n_val..]);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<HdiDataset> {
        parse_ratings(s.as_bytes(), Delimiter::Auto)
    }

    #[test]
    fn two_users_one_item() {
        let d = parse("1,10,5.0\n2,10,3.0").unwrap();
        assert_eq!((d.num_users(), d.num_items()), (2, 1));
        let (users, ratings) = d.by_item().row(0);
        assert_eq!(users, &[0, 1]);
        assert_eq!(ratings, &[5.0, 3.0]);
    }

    #[test]
    fn double_colon_delimiter() {
        let d = parse_ratings("1::10::5.0".as_bytes(), Delimiter::DoubleColon).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries()[0].rating, 5.0);
    }

    #[test]
    fn duplicate_keeps_last_rating() {
        let d = parse("1,10,5.0\n1,10,2.0").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries()[0].rating, 2.0);
        assert_eq!(d.by_user().row(0).1, &[2.0]);
    }

    #[test]
    fn comments_timestamps_and_whitespace() {
        let d = parse("# header\n\n196 242 3 881250949\n186\t302\t3\t891717742\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.ids().users.token(1), Some("186"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("1,2,3\n1,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1,2,abc") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_empty_rejected() {
        assert!(matches!(parse("1,2,NaN"), Err(Error::NonFiniteRating { line: 1, .. })));
        assert!(matches!(parse("1,2,inf"), Err(Error::NonFiniteRating { .. })));
        assert!(matches!(parse(""), Err(Error::EmptyInput)));
        assert!(matches!(parse("# only a comment\n"), Err(Error::EmptyInput)));
    }

    #[test]
    fn adjacency_sorted_by_counterpart() {
        let d = parse("a,z,1\na,x,2\na,y,3\nb,x,4").unwrap();
        // items interned z=0, x=1, y=2
        let (items, ratings) = d.by_user().row(0);
        assert_eq!(items, &[0, 1, 2]);
        assert_eq!(ratings, &[1.0, 2.0, 3.0]);
        assert_eq!(d.by_item().row(1).0, &[0, 1]);
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(10, [0.6, 0.2, 0.2]).unwrap(), [6, 2, 2]);
        assert_eq!(split_sizes(5, [0.6, 0.2, 0.2]).unwrap(), [3, 1, 1]);
        assert_eq!(split_sizes(100_000, [0.6, 0.2, 0.2]).unwrap(), [60_000, 20_000, 20_000]);
    }

    #[test]
    fn split_sizes_exhaustive_small() {
        let ratio_sets = [
            [0.6, 0.2, 0.2],
            [0.98, 0.01, 0.01],
            [0.01, 0.01, 0.98],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.5, 0.25, 0.25],
        ];
        for ratios in ratio_sets {
            for n in 3..200 {
                let s = split_sizes(n, ratios).unwrap();
                assert_eq!(s.iter().sum::<usize>(), n, "{ratios:?} n={n}");
                assert!(s.iter().all(|&k| k >= 1), "{ratios:?} n={n} -> {s:?}");
            }
        }
    }

    #[test]
    fn degenerate_ratios_rejected() {
        assert!(split_sizes(10, [0.6, 0.2, 0.1]).is_err());
        assert!(split_sizes(10, [0.8, 0.2, 0.0]).is_err());
        assert!(split_sizes(10, [1.2, -0.1, -0.1]).is_err());
        assert!(split_sizes(2, [0.6, 0.2, 0.2]).is_err());
    }

    #[test]
    fn split_is_deterministic_and_preserves_universe() {
        let text: String = (0..10).map(|k| format!("{},{},{}\n", k % 4, k % 3, k)).collect();
        let d = parse(&text).unwrap();
        let a = split_dataset(&d, [0.6, 0.2, 0.2], 7).unwrap();
        let b = split_dataset(&d, [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!((a.0.len(), a.1.len(), a.2.len()), (6, 2, 2));
        assert_eq!(a, b);
        for part in [&a.0, &a.1, &a.2] {
            assert_eq!(part.num_users(), d.num_users());
            assert_eq!(part.num_items(), d.num_items());
        }
    }

    #[test]
    fn from_triples_checks_bounds() {
        let bad = HdiDataset::from_triples(
            1,
            1,
            [RatingTriple {
                user: 1,
                item: 0,
                rating: 1.0,
            }],
        );
        assert!(matches!(bad, Err(Error::IndexOutOfRange { what: "user", .. })));
    }

    #[test]
    fn aligned_sets_share_universe() {
        let a = parse_records("u1,i1,1\nu2,i1,2".as_bytes(), Delimiter::Auto).unwrap();
        let b = parse_records("u3,i2,3".as_bytes(), Delimiter::Auto).unwrap();
        let parts = build_aligned(vec![a, b]).unwrap();
        assert_eq!(parts[0].num_users(), 3);
        assert_eq!(parts[1].num_items(), 2);
        assert_eq!(parts[1].entries()[0].user, 2);
        assert_eq!(parts[0].by_user().degree(2), 0);
    }
}
