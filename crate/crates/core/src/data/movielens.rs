use std::path::Path;

use super::{DatasetKind, InteractionRecord, ParseStats, RawDataset, SideFeatures, Vocab};
use crate::error::{Error, Result};

/// Reads a file as ISO-8859-1 (every byte is one char) and yields its
/// non-empty lines.
pub(crate) fn read_latin1_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .split(|&b| b == b'\n')
        .map(|line| line.strip_suffix(b"\r").unwrap_or(line))
        .filter(|line| !line.is_empty())
        .map(|line| line.iter().map(|&b| b as char).collect())
        .collect())
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Parses `ratings.dat`, `users.dat` and `movies.dat` in the `::`-delimited
/// MovieLens format.
pub fn parse_movielens(ratings: &Path, users: &Path, movies: &Path) -> Result<RawDataset> {
    let mut user_vocab = Vocab::new();
    let mut item_vocab = Vocab::new();
    let mut user_side = SideFeatures::new(&["gender", "age", "occupation"]);
    let mut item_side = SideFeatures::new(&["genres"]);
    let mut total = ParseStats::default();

    let mut stats = ParseStats::default();
    for line in read_latin1_lines(users)? {
        stats.lines += 1;
        let parts: Vec<&str> = line.split("::").collect();
        match parts.as_slice() {
            [id, gender, age, occupation, _zip] if !id.is_empty() => {
                let u = user_vocab.intern(id);
                user_side.values.insert(
                    u,
                    vec![
                        vec![gender.to_string()],
                        vec![age.to_string()],
                        vec![occupation.to_string()],
                    ],
                );
            }
            _ => stats.malformed += 1,
        }
    }
    stats.check(&display(users))?;
    total.lines += stats.lines;
    total.malformed += stats.malformed;

    let mut stats = ParseStats::default();
    for line in read_latin1_lines(movies)? {
        stats.lines += 1;
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() < 3 || parts[0].is_empty() {
            stats.malformed += 1;
            continue;
        }
        let m = item_vocab.intern(parts[0]);
        let genres = parts[parts.len() - 1]
            .split('|')
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        item_side.values.insert(m, vec![genres]);
    }
    stats.check(&display(movies))?;
    total.lines += stats.lines;
    total.malformed += stats.malformed;

    let mut stats = ParseStats::default();
    let mut records = Vec::new();
    for line in read_latin1_lines(ratings)? {
        stats.lines += 1;
        match parse_rating_line(&line, &mut user_vocab, &mut item_vocab) {
            Some(r) => records.push(r),
            None => stats.malformed += 1,
        }
    }
    stats.check(&display(ratings))?;
    total.lines += stats.lines;
    total.malformed += stats.malformed;

    Ok(RawDataset {
        kind: DatasetKind::MovieLens1M,
        records,
        users: user_vocab,
        items: item_vocab,
        user_side,
        item_side,
        stats: total,
    })
}

/// [`parse_movielens`] on the three standard file names inside `dir`.
pub fn parse_movielens_dir(dir: &Path) -> Result<RawDataset> {
    parse_movielens(
        &dir.join("ratings.dat"),
        &dir.join("users.dat"),
        &dir.join("movies.dat"),
    )
}

fn parse_rating_line(
    line: &str,
    users: &mut Vocab,
    items: &mut Vocab,
) -> Option<InteractionRecord> {
    let parts: Vec<&str> = line.split("::").collect();
    let [user, item, rating, ts] = parts.as_slice() else {
        return None;
    };
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let rating: u8 = rating.trim().parse().ok()?;
    if !(1..=5).contains(&rating) {
        return None;
    }
    let timestamp = ts.trim().parse().ok()?;
    Some(InteractionRecord {
        user: users.intern(user),
        item: items.intern(item),
        rating,
        timestamp: Some(timestamp),
    })
}
