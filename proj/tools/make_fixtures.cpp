// Regenerates the bundled fixture manifests under data/fixtures/ and the
// instruction-set files under data/instructions/.
// Run from the repository root: build/make_fixtures

#include <cstdio>

#include "fiat/pipeline.hpp"
#include "fiat/synthdata.hpp"

int main(int argc, char** argv) {
  std::string out_dir = argc > 1 ? argv[1] : "data/fixtures";

  // Attribution task, published per-language train sizes.
  std::map<std::string, int> attri_train = {
      {"bn", 40}, {"fi", 66}, {"ja", 20}, {"ru", 84}, {"te", 52}};
  fiat::Dataset attri = fiat::make_attribution_manifest(attri_train, "train", 20240901);
  fiat::save_jsonl(out_dir + "/attriqa_train.jsonl", attri);
  std::printf("%s\n", attri.size_report().c_str());

  // Cross-lingual QA task, published per-language train sizes (subset).
  std::map<std::string, int> xlqa_train = {
      {"as", 323}, {"bho", 326}, {"brx", 326}, {"bn", 377}, {"te", 373}};
  fiat::Dataset xlqa = fiat::make_spanqa_manifest(xlqa_train, "train", 20240902);
  fiat::save_jsonl(out_dir + "/xlqa_train.jsonl", xlqa);
  std::printf("%s\n", xlqa.size_report().c_str());
  return 0;
}
