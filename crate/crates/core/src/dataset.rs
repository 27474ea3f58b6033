//! MovieLens-format ingestion: ratings, the tag genome, and user subsampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type MovieId = u32;

pub const RATING_MIN: f64 = 0.5;
pub const RATING_MAX: f64 = 5.0;

/// A single (user, movie, stars, time) observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub rating: f64,
    pub timestamp: i64,
}

impl Rating {
    pub fn new(user_id: UserId, movie_id: MovieId, rating: f64, timestamp: i64) -> Self {
        Rating { user_id, movie_id, rating, timestamp }
    }

    fn validate(&self) -> Result<()> {
        if self.user_id == 0 || self.movie_id == 0 {
            return Err(Error::validation(format!(
                "user and movie ids must be positive (user {}, movie {})",
                self.user_id, self.movie_id
            )));
        }
        if !(RATING_MIN..=RATING_MAX).contains(&self.rating) {
            return Err(Error::validation(format!(
                "rating {} for (user {}, movie {}) outside [{RATING_MIN}, {RATING_MAX}]",
                self.rating, self.user_id, self.movie_id
            )));
        }
        Ok(())
    }
}

/// The mutable training corpus: an append-friendly rating log with per-user
/// and per-movie row indices. At most one row exists per (user, movie).
///
/// Each row also carries the simulation epoch that produced it (0 for
/// historical data).
#[derive(Debug, Clone, Default)]
pub struct RatingTable {
    rows: Vec<Rating>,
    epochs: Vec<u32>,
    user_index: BTreeMap<UserId, Vec<usize>>,
    movie_index: BTreeMap<MovieId, Vec<usize>>,
    pairs: HashMap<(UserId, MovieId), usize>,
}

impl PartialEq for RatingTable {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.epochs == other.epochs
    }
}

impl RatingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from raw ratings, keeping the latest timestamp for a
    /// repeated (user, movie) pair. Equal timestamps keep the later entry.
    pub fn from_ratings<I: IntoIterator<Item = Rating>>(ratings: I) -> Result<Self> {
        let mut table = RatingTable::new();
        for r in ratings {
            r.validate()?;
            match table.pairs.get(&(r.user_id, r.movie_id)) {
                Some(&pos) => {
                    if r.timestamp >= table.rows[pos].timestamp {
                        table.rows[pos] = r;
                    }
                }
                None => table.push_unchecked(r, 0),
            }
        }
        Ok(table)
    }

    fn push_unchecked(&mut self, r: Rating, epoch: u32) {
        let pos = self.rows.len();
        self.rows.push(r);
        self.epochs.push(epoch);
        self.user_index.entry(r.user_id).or_default().push(pos);
        self.movie_index.entry(r.movie_id).or_default().push(pos);
        self.pairs.insert((r.user_id, r.movie_id), pos);
    }

    /// Appends a new row. Rejects invalid ratings and duplicate pairs; the
    /// table is append-only so existing rows are never overwritten here.
    pub fn append(&mut self, r: Rating, epoch: u32) -> Result<()> {
        r.validate()?;
        if self.pairs.contains_key(&(r.user_id, r.movie_id)) {
            return Err(Error::validation(format!("duplicate rating for (user {}, movie {})", r.user_id, r.movie_id)));
        }
        self.push_unchecked(r, epoch);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    /// Epoch that produced each row, parallel to [`RatingTable::rows`].
    pub fn epochs(&self) -> &[u32] {
        &self.epochs
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn n_movies(&self) -> usize {
        self.movie_index.len()
    }

    /// Distinct users in ascending id order.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.user_index.keys().copied()
    }

    /// Distinct movies in ascending id order.
    pub fn movies(&self) -> impl Iterator<Item = MovieId> + '_ {
        self.movie_index.keys().copied()
    }

    pub fn contains_user(&self, user: UserId) -> bool {
        self.user_index.contains_key(&user)
    }

    pub fn get(&self, user: UserId, movie: MovieId) -> Option<&Rating> {
        self.pairs.get(&(user, movie)).map(|&p| &self.rows[p])
    }

    /// Rows belonging to `user`, in insertion order.
    pub fn user_ratings(&self, user: UserId) -> impl Iterator<Item = &Rating> + '_ {
        self.user_index.get(&user).into_iter().flatten().map(move |&p| &self.rows[p])
    }

    /// Positions of `user`'s rows, in insertion order.
    pub fn user_rows(&self, user: UserId) -> &[usize] {
        self.user_index.get(&user).map_or(&[], Vec::as_slice)
    }

    pub fn movie_rows(&self, movie: MovieId) -> &[usize] {
        self.movie_index.get(&movie).map_or(&[], Vec::as_slice)
    }

    /// The set of movies `user` has rated.
    pub fn user_movies(&self, user: UserId) -> BTreeSet<MovieId> {
        self.user_ratings(user).map(|r| r.movie_id).collect()
    }

    /// A new table holding only the rows that satisfy `keep`, order preserved.
    pub fn filter<F: Fn(&Rating) -> bool>(&self, keep: F) -> RatingTable {
        let mut out = RatingTable::new();
        for (r, &e) in self.rows.iter().zip(&self.epochs) {
            if keep(r) {
                out.push_unchecked(*r, e);
            }
        }
        out
    }

    /// Returns a copy in which `user`'s rows are replaced by `entries`
    /// (movie, rating). The replacement rows are appended at the end.
    pub fn with_user_replaced(
        &self,
        user: UserId,
        entries: impl IntoIterator<Item = (MovieId, f64)>,
    ) -> Result<RatingTable> {
        let mut out = self.filter(|r| r.user_id != user);
        for (movie, rating) in entries {
            out.append(Rating::new(user, movie, rating, 0), 0)?;
        }
        Ok(out)
    }

    /// Serializes as MovieLens `ratings.csv` (with header). Tables holding
    /// simulated rows get a fifth `epoch` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_epoch = self.epochs.iter().any(|&e| e > 0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["userId", "movieId", "rating", "timestamp"];
        if with_epoch {
            header.push("epoch");
        }
        w.write_record(&header).map_err(csv_io)?;
        for (r, e) in self.rows.iter().zip(&self.epochs) {
            let mut rec =
                vec![r.user_id.to_string(), r.movie_id.to_string(), r.rating.to_string(), r.timestamp.to_string()];
            if with_epoch {
                rec.push(e.to_string());
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::validation(format!("{other:?}")),
    }
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| Error::Parse { line, message: format!("missing field `{name}`") })?;
    raw.trim().parse().map_err(|_| Error::Parse { line, message: format!("invalid {name} `{raw}`") })
}

fn reader<R: Read>(input: R, header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(header).flexible(true).from_reader(input)
}

/// Parses `userId,movieId,rating,timestamp[,epoch]` lines. Rows with a
/// non-zero epoch are simulated and are appended after the deduplicated
/// history, in file order.
pub fn parse_ratings<R: Read>(input: R, header: bool) -> Result<RatingTable> {
    let mut rdr = reader(input, header);
    let mut history = Vec::new();
    let mut simulated = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 && rec.len() != 5 {
            return Err(Error::Parse { line, message: format!("expected 4 or 5 fields, found {}", rec.len()) });
        }
        let r = Rating::new(
            field(&rec, 0, "userId")?,
            field(&rec, 1, "movieId")?,
            field(&rec, 2, "rating")?,
            field(&rec, 3, "timestamp")?,
        );
        if !r.rating.is_finite() {
            return Err(Error::Parse { line, message: "non-finite rating".into() });
        }
        let epoch: u32 = if rec.len() == 5 { field(&rec, 4, "epoch")? } else { 0 };
        if epoch == 0 {
            history.push(r);
        } else {
            simulated.push((r, epoch, line));
        }
    }
    let mut table = RatingTable::from_ratings(history)?;
    for (r, epoch, line) in simulated {
        table.append(r, epoch).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    Ok(table)
}

/// Dense tag-relevance matrix R with `R[k, i] = rel(tag k, movie i)`.
///
/// Storage is movie-major so that a movie's tag vector is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct TagRelevanceMatrix {
    movie_ids: Vec<MovieId>,
    tag_names: Vec<String>,
    values: Vec<f64>,
    movie_pos: HashMap<MovieId, usize>,
}

impl TagRelevanceMatrix {
    /// `by_movie[i]` is the tag vector of `movie_ids[i]`.
    pub fn new(movie_ids: Vec<MovieId>, tag_names: Vec<String>, by_movie: Vec<Vec<f64>>) -> Result<Self> {
        if by_movie.len() != movie_ids.len() {
            return Err(Error::validation("one tag vector required per movie"));
        }
        let n = tag_names.len();
        let mut values = Vec::with_capacity(n * movie_ids.len());
        for (row, id) in by_movie.iter().zip(&movie_ids) {
            if row.len() != n {
                return Err(Error::validation(format!("movie {id} has {} tag values, expected {n}", row.len())));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(movie_ids, tag_names, values)
    }

    fn from_flat(movie_ids: Vec<MovieId>, tag_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("relevance {v} outside [0, 1]")));
        }
        let mut movie_pos = HashMap::with_capacity(movie_ids.len());
        for (i, &id) in movie_ids.iter().enumerate() {
            if movie_pos.insert(id, i).is_some() {
                return Err(Error::validation(format!("duplicate movie id {id}")));
            }
        }
        let distinct: BTreeSet<&str> = tag_names.iter().map(String::as_str).collect();
        if distinct.len() != tag_names.len() {
            return Err(Error::validation("duplicate tag name"));
        }
        Ok(TagRelevanceMatrix { movie_ids, tag_names, values, movie_pos })
    }

    pub fn n_tags(&self) -> usize {
        self.tag_names.len()
    }

    pub fn n_movies(&self) -> usize {
        self.movie_ids.len()
    }

    pub fn movie_ids(&self) -> &[MovieId] {
        &self.movie_ids
    }

    pub fn tag_names(&self) -> &[String] {
        &self.tag_names
    }

    pub fn index_of(&self, movie: MovieId) -> Option<usize> {
        self.movie_pos.get(&movie).copied()
    }

    pub fn contains(&self, movie: MovieId) -> bool {
        self.movie_pos.contains_key(&movie)
    }

    /// Tag vector (length N) of the movie at position `idx`.
    pub fn movie_vector(&self, idx: usize) -> &[f64] {
        let n = self.n_tags();
        &self.values[idx * n..(idx + 1) * n]
    }

    pub fn rel(&self, tag: usize, movie_idx: usize) -> f64 {
        self.values[movie_idx * self.n_tags() + tag]
    }

    /// Relevance of `tag` across all movies (length M).
    pub fn tag_row(&self, tag: usize) -> Vec<f64> {
        (0..self.n_movies()).map(|i| self.rel(tag, i)).collect()
    }

    /// Tag-major copy: N rows of length M.
    pub fn tag_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_tags()).map(|t| self.tag_row(t)).collect()
    }

    /// Sub-matrix restricted to the given movies (in the given order).
    pub fn restrict(&self, movies: &[MovieId]) -> Result<Self> {
        let mut values = Vec::with_capacity(movies.len() * self.n_tags());
        for &m in movies {
            let idx = self.index_of(m).ok_or_else(|| Error::argument(format!("movie {m} not in genome")))?;
            values.extend_from_slice(self.movie_vector(idx));
        }
        Self::from_flat(movies.to_vec(), self.tag_names.clone(), values)
    }
}

/// Result of loading the genome; `excluded_movies` counts movies dropped for
/// incomplete tag coverage.
#[derive(Debug, Clone)]
pub struct ParsedGenome {
    pub genome: TagRelevanceMatrix,
    pub excluded_movies: usize,
}

/// Parses `genome-scores.csv` (`movieId,tagId,relevance`) and
/// `genome-tags.csv` (`tagId,tag`), both with a header line.
///
/// Tags are ordered by tag id and movies by movie id. A movie that lacks a
/// score for any tag is excluded.
pub fn parse_genome<S: Read, T: Read>(scores: S, tags: T) -> Result<ParsedGenome> {
    let mut tag_rdr = reader(tags, true);
    let mut tag_map: BTreeMap<u32, String> = BTreeMap::new();
    for rec in tag_rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        let id: u32 = field(&rec, 0, "tagId")?;
        let name: String = field(&rec, 1, "tag")?;
        if tag_map.insert(id, name).is_some() {
            return Err(Error::validation(format!("duplicate tag id {id}")));
        }
    }
    let tag_col: HashMap<u32, usize> = tag_map.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let n = tag_map.len();

    let mut per_movie: BTreeMap<MovieId, (Vec<f64>, usize)> = BTreeMap::new();
    let mut score_rdr = reader(scores, true);
    for rec in score_rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map_or(0, |p| p.line());
        let movie: MovieId = field(&rec, 0, "movieId")?;
        let tag: u32 = field(&rec, 1, "tagId")?;
        let rel: f64 = field(&rec, 2, "relevance")?;
        if !(0.0..=1.0).contains(&rel) {
            return Err(Error::validation(format!("line {line}: relevance {rel} outside [0, 1]")));
        }
        let col = *tag_col.get(&tag).ok_or_else(|| Error::validation(format!("line {line}: unknown tag id {tag}")))?;
        let (row, filled) = per_movie.entry(movie).or_insert_with(|| (vec![f64::NAN; n], 0));
        if !row[col].is_nan() {
            return Err(Error::validation(format!("line {line}: duplicate score for movie {movie}, tag {tag}")));
        }
        row[col] = rel;
        *filled += 1;
    }

    let mut movie_ids = Vec::with_capacity(per_movie.len());
    let mut values = Vec::with_capacity(per_movie.len() * n);
    let mut excluded = 0;
    for (movie, (row, filled)) in per_movie {
        if filled == n {
            movie_ids.push(movie);
            values.extend(row);
        } else {
            excluded += 1;
        }
    }
    if excluded > 0 {
        warn!("excluded {excluded} movies with incomplete tag coverage");
    }
    let genome = TagRelevanceMatrix::from_flat(movie_ids, tag_map.into_values().collect(), values)?;
    Ok(ParsedGenome { genome, excluded_movies: excluded })
}

/// Parses `movies.csv` (`movieId,title,genres`) into an id → title map.
pub fn parse_movie_titles<R: Read>(input: R) -> Result<HashMap<MovieId, String>> {
    let mut rdr = reader(input, true);
    let mut titles = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_parse)?;
        titles.insert(field(&rec, 0, "movieId")?, field(&rec, 1, "title")?);
    }
    Ok(titles)
}

/// Keeps exactly the ratings whose movie has tag-genome coverage.
pub fn filter_to_tagged(ratings: &RatingTable, genome: &TagRelevanceMatrix) -> RatingTable {
    ratings.filter(|r| genome.contains(r.movie_id))
}

/// A seeded population of users drawn from a rating table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSample {
    pub user_ids: Vec<UserId>,
    pub seed: u64,
}

/// Draws `n` distinct users uniformly without replacement and restricts the
/// table to them.
pub fn subsample_users(ratings: &RatingTable, n: usize, seed: u64) -> Result<(RatingTable, UserSample)> {
    let users: Vec<UserId> = ratings.users().collect();
    if n > users.len() {
        return Err(Error::argument(format!("cannot sample {n} users from {} available", users.len())));
    }
    let mut rng = crate::seeded_rng(seed);
    let user_ids: Vec<UserId> = index::sample(&mut rng, users.len(), n).into_iter().map(|i| users[i]).collect();
    let chosen: BTreeSet<UserId> = user_ids.iter().copied().collect();
    let table = ratings.filter(|r| chosen.contains(&r.user_id));
    Ok((table, UserSample { user_ids, seed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "userId,movieId,rating,timestamp\n";

    #[test]
    fn parses_movielens_line() {
        let t = parse_ratings(format!("{HEADER}1,296,5.0,1147880044\n").as_bytes(), true).unwrap();
        assert_eq!(t.rows(), &[Rating::new(1, 296, 5.0, 1147880044)]);
    }

    #[test]
    fn empty_after_header() {
        let t = parse_ratings(HEADER.as_bytes(), true).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn duplicate_keeps_latest_timestamp() {
        let text = format!("{HEADER}1,296,3.0,20\n1,296,4.0,10\n");
        let t = parse_ratings(text.as_bytes(), true).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows()[0].rating, 3.0);
        assert_eq!(t.rows()[0].timestamp, 20);

        let text = format!("{HEADER}1,296,4.0,10\n1,296,3.0,20\n");
        let t = parse_ratings(text.as_bytes(), true).unwrap();
        assert_eq!(t.rows()[0].timestamp, 20);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{HEADER}1,296,5.0,1\n1,abc,5.0,1\n");
        match parse_ratings(text.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{HEADER}1,296,5.0\n");
        assert!(matches!(parse_ratings(text.as_bytes(), true), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn out_of_range_rating_rejected() {
        let text = format!("{HEADER}1,296,5.5,1\n");
        assert!(matches!(parse_ratings(text.as_bytes(), true), Err(Error::Validation(_))));
        let text = format!("{HEADER}1,296,0.0,1\n");
        assert!(matches!(parse_ratings(text.as_bytes(), true), Err(Error::Validation(_))));
    }

    #[test]
    fn append_rejects_duplicates() {
        let mut t = RatingTable::from_ratings([Rating::new(1, 2, 3.0, 0)]).unwrap();
        assert!(t.append(Rating::new(1, 2, 4.0, 0), 1).is_err());
        t.append(Rating::new(1, 3, 4.0, 0), 1).unwrap();
        assert_eq!(t.epochs(), &[0, 1]);
        assert_eq!(t.user_movies(1).into_iter().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn simulated_rows_keep_their_epoch() {
        let mut t = RatingTable::from_ratings([Rating::new(1, 2, 3.0, 9), Rating::new(2, 2, 4.0, 8)]).unwrap();
        t.append(Rating::new(1, 5, 4.2, 0), 3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"userId,movieId,rating,timestamp,epoch\n"));
        let back = parse_ratings(buf.as_slice(), true).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.epochs(), &[0, 0, 3]);
        let dup = format!("{HEADER}1,2,3.0,9\n1,2,4.0,0,1\n");
        assert!(matches!(parse_ratings(dup.as_bytes(), true), Err(Error::Parse { line: 3, .. })));
    }

    const TAGS: &str = "tagId,tag\n1,funny\n2,dark\n3,scenic\n";

    #[test]
    fn genome_full_assembly() {
        let scores = "movieId,tagId,relevance\n1,1,0.1\n1,2,0.2\n1,3,0.3\n2,1,0.4\n2,2,0.5\n2,3,0.6\n";
        let g = parse_genome(scores.as_bytes(), TAGS.as_bytes()).unwrap();
        assert_eq!(g.excluded_movies, 0);
        assert_eq!((g.genome.n_tags(), g.genome.n_movies()), (3, 2));
        assert_eq!(g.genome.rel(1, 1), 0.5);
        assert_eq!(g.genome.tag_row(2), vec![0.3, 0.6]);
        assert_eq!(g.genome.tag_names()[0], "funny");
    }

    #[test]
    fn genome_rejects_out_of_range() {
        let scores = "movieId,tagId,relevance\n1,1,1.5\n";
        assert!(matches!(parse_genome(scores.as_bytes(), TAGS.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn genome_excludes_partial_movies() {
        let scores = "movieId,tagId,relevance\n1,1,0.1\n1,2,0.2\n1,3,0.3\n2,1,0.4\n2,2,0.5\n";
        let g = parse_genome(scores.as_bytes(), TAGS.as_bytes()).unwrap();
        assert_eq!(g.excluded_movies, 1);
        assert_eq!(g.genome.movie_ids(), &[1]);
    }

    fn toy_genome(ids: &[MovieId]) -> TagRelevanceMatrix {
        TagRelevanceMatrix::new(ids.to_vec(), vec!["a".into()], ids.iter().map(|_| vec![0.5]).collect()).unwrap()
    }

    #[test]
    fn filter_keeps_tagged_only() {
        let t = RatingTable::from_ratings([
            Rating::new(1, 1, 3.0, 0),
            Rating::new(1, 2, 3.0, 0),
            Rating::new(2, 3, 3.0, 0),
        ])
        .unwrap();
        let f = filter_to_tagged(&t, &toy_genome(&[1, 3]));
        assert_eq!(f.movies().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(filter_to_tagged(&t, &toy_genome(&[1, 2, 3])), t);
    }

    #[test]
    fn subsample_exhaustive_and_errors() {
        let t = RatingTable::from_ratings((1..=5).map(|u| Rating::new(u, 1, 3.0, 0))).unwrap();
        let (sub, sample) = subsample_users(&t, 5, 3).unwrap();
        assert_eq!(sub.len(), 5);
        let mut ids = sample.user_ids.clone();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
        assert!(matches!(subsample_users(&t, 6, 3), Err(Error::Argument(_))));
    }

    fn arb_table() -> impl Strategy<Value = RatingTable> {
        prop::collection::vec((1u32..20, 1u32..30, 1u32..=10, 0i64..1000), 0..80).prop_map(|v| {
            RatingTable::from_ratings(v.into_iter().map(|(u, m, r, ts)| Rating::new(u, m, r as f64 * 0.5, ts))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(t in arb_table()) {
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            let back = parse_ratings(buf.as_slice(), true).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn filter_is_idempotent(t in arb_table(), keep in prop::collection::btree_set(1u32..30, 0..30)) {
            let ids: Vec<MovieId> = keep.into_iter().collect();
            let g = toy_genome(&ids);
            let once = filter_to_tagged(&t, &g);
            prop_assert_eq!(filter_to_tagged(&once, &g), once.clone());
            prop_assert!(once.rows().iter().all(|r| g.contains(r.movie_id)));
        }

        #[test]
        fn subsample_is_deterministic(t in arb_table(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
            let n = (t.n_users() as f64 * frac) as usize;
            let a = subsample_users(&t, n, seed).unwrap();
            let b = subsample_users(&t, n, seed).unwrap();
            prop_assert_eq!(&a.1, &b.1);
            prop_assert_eq!(&a.0, &b.0);
            prop_assert_eq!(a.0.n_users(), n);
            let distinct: BTreeSet<_> = a.1.user_ids.iter().collect();
            prop_assert_eq!(distinct.len(), n);
        }
    }
}
