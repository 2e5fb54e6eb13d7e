#pragma once

#include "pigpvae/config.hpp"

namespace pigpvae {

// CLI subcommand implementations. Each writes its artifacts plus a resolved
// config copy and a run manifest under cfg.output_dir, and throws
// pigpvae::Error on failure.
void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_generate(const RunConfig& cfg);
void cmd_evaluate(const RunConfig& cfg);
void cmd_experiment(const RunConfig& cfg);

}  // namespace pigpvae
