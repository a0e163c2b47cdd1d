use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// One epoch's minibatch row indices over a fresh shuffle of `0..n`.
///
/// The last short batch is kept. A lone leftover row cannot be
/// batch-normalized, so it joins the batch before it instead.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Argument(format!(
            "batch size {batch_size} is below 2; batch normalization needs at least 2 rows"
        )));
    }
    if n < 2 {
        return Err(Error::Argument(format!("{n} training rows; need at least 2")));
    }
    let perm = rng.permutation(n);
    let mut out: Vec<Vec<usize>> = perm.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    Ok(out)
}

/// Shuffled `(x, y)` minibatches for one epoch.
pub fn batches(x: &Matrix, y: &Matrix, batch_size: usize, rng: &mut Rng) -> Result<Vec<(Matrix, Matrix)>> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!("{} inputs but {} targets", x.rows(), y.rows())));
    }
    Ok(batch_indices(x.rows(), batch_size, rng)?
        .into_iter()
        .map(|idx| (x.select_rows(&idx), y.select_rows(&idx)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_row_once() {
        let b = batch_indices(129, 64, &mut Rng::new(1)).unwrap();
        assert_eq!(b.iter().map(|v| v.len()).collect::<Vec<_>>(), vec![64, 65]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..129).collect::<Vec<_>>());
        let b = batch_indices(100, 64, &mut Rng::new(1)).unwrap();
        assert_eq!(b[1].len(), 36);
    }

    #[test]
    fn rejects_tiny_batches() {
        assert!(matches!(
            batch_indices(10, 1, &mut Rng::new(1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn epochs_differ_but_replay() {
        let mut r = Rng::new(4);
        let e1 = batch_indices(50, 8, &mut r).unwrap();
        let e2 = batch_indices(50, 8, &mut r).unwrap();
        assert_ne!(e1, e2);
        let mut r = Rng::new(4);
        assert_eq!(batch_indices(50, 8, &mut r).unwrap(), e1);
    }
}
