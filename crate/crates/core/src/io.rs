//! File formats: CSV tables with pinned headers, key/value report and
//! metadata documents, and the `SPKD` binary matrix container.
//!
//! All floating-point output goes through [`fmt_float`] (17 significant
//! digits), so a run's files are byte-for-byte reproducible.

use std::fs;
use std::path::Path;

use crate::decomposition::DecompositionReport;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::ot::CouplingCostStats;
use crate::pca::FittedSpike;
use crate::sweep::{BinnedMae, ClockRow, ErrorHistogram, SweepTable};

/// Shortest-round-trip-safe float formatting: 17 significant digits in
/// scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Sidecar filename written once per output directory.
pub const METADATA_FILENAME: &str = "run.meta";

/// `d,k,…` sweep table with one line per admissible cell.
pub fn sweep_csv(table: &SweepTable) -> String {
    let mut s =
        String::from("d,k,term1,coupling_variance,total,gap,ratio,mc_se,seed,n_outer,grid_n\n");
    for r in &table.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.d,
            r.k,
            fmt_float(r.term1),
            fmt_float(r.coupling_variance),
            fmt_float(r.total),
            fmt_float(r.gap),
            fmt_float(r.ratio),
            fmt_float(r.mc_se),
            r.seed,
            r.n_outer,
            r.grid_n
        ));
    }
    s
}

/// Histogram bins as `bin_lo,bin_hi,count` lines.
pub fn histogram_csv(hist: &ErrorHistogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (i, &count) in hist.bin_counts.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{}\n",
            fmt_float(hist.bin_edges[i]),
            fmt_float(hist.bin_edges[i + 1]),
            count
        ));
    }
    s
}

/// Binned MAE as `t_center,mae,n,reflection_pred` lines; empty bins
/// are absent.
pub fn binned_mae_csv(mae: &BinnedMae) -> String {
    let mut s = String::from("t_center,mae,n,reflection_pred\n");
    for i in 0..mae.t_bin_centers.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(mae.t_bin_centers[i]),
            fmt_float(mae.mae_per_bin[i]),
            mae.bin_counts[i],
            fmt_float(mae.reflection_pred[i])
        ));
    }
    s
}

/// Pairing-cost rows as `mode,batch_size,n_batches,mean_pair_cost,std_error`.
pub fn ot_csv(stats: &[CouplingCostStats]) -> String {
    let mut s = String::from("mode,batch_size,n_batches,mean_pair_cost,std_error\n");
    for r in stats {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mode.label(),
            r.batch_size,
            r.n_batches,
            fmt_float(r.mean_pair_cost),
            fmt_float(r.std_error)
        ));
    }
    s
}

/// Critical-point table as `sigma2,t_star,clock_min` lines.
pub fn clock_csv(rows: &[ClockRow]) -> String {
    let mut s = String::from("sigma2,t_star,clock_min\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{}\n",
            fmt_float(r.sigma2),
            fmt_float(r.t_star),
            fmt_float(r.clock_min)
        ));
    }
    s
}

/// Decomposition report as a key/value document, one field per line.
pub fn decomposition_report_text(r: &DecompositionReport) -> String {
    format!(
        "term1={}\ncoupling_variance={}\ntotal_timeblind_variance={}\ngap={}\nratio={}\nmc_samples={}\ngrid_points={}\ninterval={}..{}\nmc_standard_error={}\n",
        fmt_float(r.term1),
        fmt_float(r.coupling_variance),
        fmt_float(r.total_timeblind_variance),
        fmt_float(r.gap),
        fmt_float(r.ratio),
        r.mc_samples,
        r.grid_points,
        fmt_float(r.interval.lo()),
        fmt_float(r.interval.hi()),
        fmt_float(r.mc_standard_error)
    )
}

/// Plain `key=value` document with LF line endings.
pub fn metadata_text(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

/// Writes UTF-8 text, mapping failures to a path-carrying error.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

const SPKD_MAGIC: &[u8; 4] = b"SPKD";

/// Writes a matrix in the `SPKD` container: magic, `u32` LE row and
/// column counts, then row-major `f64` LE values.
pub fn write_spkd(path: &Path, m: &Matrix<f64>) -> Result<()> {
    if m.nrows() > u32::MAX as usize || m.ncols() > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!(
            "matrix {}x{} exceeds the container's 32-bit dimensions",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut bytes = Vec::with_capacity(12 + 8 * m.data().len());
    bytes.extend_from_slice(SPKD_MAGIC);
    bytes.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an `SPKD` matrix, rejecting bad magic and any payload whose
/// length disagrees with the header.
pub fn read_spkd(path: &Path) -> Result<Matrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::parse(
            path,
            format!("file too short for an SPKD header: {} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != SPKD_MAGIC {
        return Err(Error::parse(path, "bad magic; expected \"SPKD\""));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::parse(path, "header dimensions overflow"))?;
    let actual = bytes.len() - 12;
    if actual != expected {
        return Err(Error::parse(
            path,
            format!(
                "payload length mismatch: expected {} bytes for {}x{}, found {}",
                expected, n, d, actual
            ),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(n, d, data)
}

/// Reads a headerless CSV of decimal floats, one sample per row.
pub fn read_csv_matrix(path: &Path) -> Result<Matrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ncols = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        path,
                        format!("line {}: not a number: {:?}", lineno + 1, field.trim()),
                    )
                })
            })
            .collect::<Result<_>>()?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    path,
                    format!(
                        "line {}: ragged row has {} fields, expected {}",
                        lineno + 1,
                        row.len(),
                        c
                    ),
                ));
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    Matrix::from_rows(&rows)
}

/// Reads a data matrix by extension: `.spkd` binary, anything else as
/// CSV.
pub fn read_matrix_auto(path: &Path) -> Result<Matrix<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("spkd") => read_spkd(path),
        _ => read_csv_matrix(path),
    }
}

const FITTED_TEXT: &str = "fit.txt";
const FITTED_BASIS: &str = "u_x.spkd";
const FITTED_MEAN: &str = "mean.spkd";

/// Writes a fitted spike into `dir`: a key/value document plus `SPKD`
/// companions for the basis and the mean.
pub fn write_fitted(dir: &Path, fitted: &FittedSpike<f64>) -> Result<()> {
    let lambdas = fitted
        .lambdas
        .iter()
        .map(|&l| fmt_float(l))
        .collect::<Vec<_>>()
        .join(",");
    let text = format!(
        "k={}\nsigma2={}\nexplained_fraction={}\nlambdas={}\n",
        fitted.k,
        fmt_float(fitted.sigma2),
        fmt_float(fitted.explained_fraction),
        lambdas
    );
    write_text(&dir.join(FITTED_TEXT), &text)?;
    write_spkd(&dir.join(FITTED_BASIS), &fitted.u_x)?;
    let mean = Matrix::from_vec(1, fitted.mean.len(), fitted.mean.clone())?;
    write_spkd(&dir.join(FITTED_MEAN), &mean)
}

/// Reads a fitted spike written by [`write_fitted`], checking the
/// document and its companions against each other.
pub fn read_fitted(dir: &Path) -> Result<FittedSpike<f64>> {
    let text_path = dir.join(FITTED_TEXT);
    let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
    let mut k = None;
    let mut sigma2 = None;
    let mut explained = None;
    let mut lambdas = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "k" => {
                k = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::parse(&text_path, format!("bad rank: {:?}", value)))?,
                )
            }
            "sigma2" => sigma2 = Some(parse_float(&text_path, value)?),
            "explained_fraction" => explained = Some(parse_float(&text_path, value)?),
            "lambdas" => {
                lambdas = Some(if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|f| parse_float(&text_path, f))
                        .collect::<Result<Vec<f64>>>()?
                })
            }
            _ => {}
        }
    }
    let (Some(k), Some(sigma2), Some(explained_fraction), Some(lambdas)) =
        (k, sigma2, explained, lambdas)
    else {
        return Err(Error::parse(
            &text_path,
            "missing one of k, sigma2, explained_fraction, lambdas",
        ));
    };
    let u_x = read_spkd(&dir.join(FITTED_BASIS))?;
    let mean_mat = read_spkd(&dir.join(FITTED_MEAN))?;
    if u_x.ncols() != k || lambdas.len() != k {
        return Err(Error::parse(
            &text_path,
            format!(
                "rank {} disagrees with {} basis columns and {} excesses",
                k,
                u_x.ncols(),
                lambdas.len()
            ),
        ));
    }
    if mean_mat.nrows() != 1 || mean_mat.ncols() != u_x.nrows() {
        return Err(Error::parse(
            &text_path,
            format!(
                "mean is {}x{}, expected 1x{}",
                mean_mat.nrows(),
                mean_mat.ncols(),
                u_x.nrows()
            ),
        ));
    }
    Ok(FittedSpike {
        k,
        u_x,
        lambdas,
        sigma2,
        mean: mean_mat.data().to_vec(),
        explained_fraction,
    })
}

fn parse_float(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("not a number: {:?}", field.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SpikedModel, TimeInterval, TimeMode};
    use crate::ot::{coupling_cost_stats, PairingMode};
    use crate::pca::{fit_spiked, RankRule};
    use crate::sweep::{clock_table, sweep_dk, SweepConfig};

    #[test]
    fn float_format_round_trips_exactly() {
        for &v in &[0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -7.25e101] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn clock_csv_layout() {
        let rows = clock_table(&[1.0]).unwrap();
        let csv = clock_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "sigma2,t_star,clock_min");
        let row = lines.next().unwrap();
        assert!(row.starts_with("1.0000000000000000e0,5.0000000000000000e-1,"));
        assert!(lines.next().is_none());
    }

    #[test]
    fn ot_csv_layout() {
        let model = SpikedModel::new(4, 1, vec![3.0], 0.5).unwrap();
        let stats = vec![
            coupling_cost_stats(&model, PairingMode::Independent, 2, 3, 9).unwrap(),
            coupling_cost_stats(&model, PairingMode::MinibatchOt, 2, 3, 9).unwrap(),
        ];
        let csv = ot_csv(&stats);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "mode,batch_size,n_batches,mean_pair_cost,std_error"
        );
        assert!(lines.next().unwrap().starts_with("independent,2,3,"));
        assert!(lines.next().unwrap().starts_with("minibatch_ot,2,3,"));
        assert!(lines.next().is_none());
    }

    #[test]
    fn sweep_csv_layout() {
        let config = SweepConfig {
            s_total: 5.0,
            sigma2: 0.1,
            interval: TimeInterval::symmetric(0.15).unwrap(),
            n_outer: 100,
            grid_n: 8,
        };
        let table = sweep_dk(&[4], &[1], &config, 1).unwrap();
        let csv = sweep_csv(&table);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "d,k,term1,coupling_variance,total,gap,ratio,mc_se,seed,n_outer,grid_n"
        );
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("4,1,"));
    }

    #[test]
    fn report_text_has_all_fields() {
        let m = SpikedModel::new(4, 0, vec![], 1.0).unwrap();
        let r = crate::decomposition::decompose(&m, TimeInterval::unit(), 200, 16, 2).unwrap();
        let text = decomposition_report_text(&r);
        for key in [
            "term1=",
            "coupling_variance=",
            "total_timeblind_variance=",
            "gap=",
            "ratio=",
            "mc_samples=200",
            "grid_points=16",
            "interval=0.0000000000000000e0..1.0000000000000000e0",
            "mc_standard_error=",
        ] {
            assert!(text.contains(key), "missing {:?} in {:?}", key, text);
        }
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn spkd_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spkd");
        let m = Matrix::from_rows(&[vec![1.5, -2.0, 0.0], vec![f64::MIN_POSITIVE, 3.25, 1e300]])
            .unwrap();
        write_spkd(&path, &m).unwrap();
        assert_eq!(read_spkd(&path).unwrap(), m);
    }

    #[test]
    fn spkd_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spkd");
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        write_spkd(&path, &m).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = read_spkd(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{}", err);

        bytes[0] = b'S';
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        let err = read_spkd(&path).unwrap_err().to_string();
        assert!(err.contains("expected 32 bytes"), "{}", err);
        assert!(err.contains("found 24"), "{}", err);
    }

    #[test]
    fn csv_matrix_reader_accepts_plain_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "1.0, 2.0\n-3.5,4\n\n").unwrap();
        let m = read_csv_matrix(&path).unwrap();
        assert_eq!(
            m,
            Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.5, 4.0]]).unwrap()
        );
    }

    #[test]
    fn csv_matrix_reader_rejects_ragged_and_junk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        let err = read_csv_matrix(&path).unwrap_err().to_string();
        assert!(err.contains("ragged"), "{}", err);

        fs::write(&path, "1,two\n").unwrap();
        let err = read_csv_matrix(&path).unwrap_err().to_string();
        assert!(err.contains("not a number"), "{}", err);

        fs::write(&path, "").unwrap();
        assert!(read_csv_matrix(&path).is_err());
    }

    #[test]
    fn fitted_round_trip() {
        let model = SpikedModel::uniform_excess(8, 2, 6.0, 0.5).unwrap();
        let x = model.sample_batch(300, TimeMode::Fixed(1.0), 17).unwrap().x;
        let fitted = fit_spiked(&x, RankRule::Fixed(2)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        write_fitted(dir.path(), &fitted).unwrap();
        let back = read_fitted(dir.path()).unwrap();
        assert_eq!(back, fitted);
    }

    #[test]
    fn metadata_is_plain_lf_lines() {
        let text = metadata_text(&[
            ("subcommand".into(), "clock".into()),
            ("seed".into(), "7".into()),
        ]);
        assert_eq!(text, "subcommand=clock\nseed=7\n");
    }
}
