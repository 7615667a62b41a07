#pragma once

// Scoring a trained model over a population and turning scores into ROC
// curves, FPR at fixed TPR, AUC and report files.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fedua/codebook.hpp"
#include "fedua/datagen.hpp"
#include "fedua/nn/model.hpp"

namespace fedua::eval {

using codebook::Codebook;
using codebook::UserId;

enum class Cohort { Train, Validation, Unseen };
std::string to_string(Cohort cohort);
Cohort parse_cohort(const std::string& name);

struct Score {
  UserId claimed = 0;  // identity whose embedding the sample is compared to
  UserId source = 0;   // user the sample came from
  double value = 0.0;  // ||y_claimed - F(x)||^2
};

struct ScoreSet {
  Cohort cohort = Cohort::Train;
  std::vector<Score> genuine;
  std::vector<Score> imposter;
};

/// Train / Validation: every participant's samples of that split against its
/// own embedding (genuine) and against every other participant's embedding
/// (imposter). Unseen: genuine attempts are participants' test samples (their
/// validation samples when no test split exists); imposter attempts are every
/// unseen user's sample against every participant embedding.
ScoreSet score_population(const nn::ModelParams& params, const nn::ModelConfig& config, const Codebook& book,
                          const datagen::Population& population, Cohort cohort, std::size_t threads = 1);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) at threshold -inf first, (1,1) last
  double auc = 0.0;
};

/// Sweeps the threshold over the sorted distinct scores, accepting e <= t.
/// Throws ArgumentError when either side is empty.
RocCurve roc_curve(const std::vector<double>& genuine, const std::vector<double>& imposter);
RocCurve roc_curve(const ScoreSet& scores);

/// Trapezoid rule over the curve's points.
double trapezoid_auc(const std::vector<RocPoint>& points);

/// Smallest FPR among points with TPR >= target. Requires 0 < target <= 1.
double fpr_at_tpr(const RocCurve& curve, double tpr_target);

struct CohortCurve {
  Cohort cohort;
  RocCurve curve;
  std::size_t genuine_count = 0;
  std::size_t imposter_count = 0;
};

struct ReportOptions {
  std::size_t embedding_length = 0;
  std::vector<double> tpr_targets{0.8, 0.9};
  bool log_x = false;
};

/// Writes roc_<cohort>.csv (threshold,fpr,tpr), summary.csv and
/// roc_ne<n_e>.svg into `dir`. Output bytes depend only on the inputs.
/// Throws ArgumentError for an empty cohort list, IoError when unwritable.
void export_report(const std::vector<CohortCurve>& curves, const std::filesystem::path& dir,
                   const ReportOptions& options);

std::string roc_csv(const RocCurve& curve);
std::vector<RocPoint> parse_roc_csv(const std::string& text);
std::string summary_csv(const std::vector<CohortCurve>& curves, const std::vector<double>& tpr_targets);
std::string roc_svg(const std::vector<CohortCurve>& curves, std::size_t embedding_length, bool log_x);

}  // namespace fedua::eval
