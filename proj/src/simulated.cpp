#include "reflectforge/simulated.hpp"

#include <memory>
#include <unordered_map>

#include "reflectforge/io.hpp"
#include "reflectforge/prompts.hpp"
#include "reflectforge/rng.hpp"
#include "reflectforge/text.hpp"

namespace reflectforge {

const std::vector<LexiconEntry>& simulated_lexicon() {
  static const std::vector<LexiconEntry> lex = {
      {"amoxicillin", "drug"},         {"ibuprofen", "drug"},
      {"paracetamol", "drug"},         {"metformin", "drug"},
      {"omeprazole", "drug"},          {"salbutamol", "drug"},
      {"prednisolone", "drug"},        {"cetirizine", "drug"},
      {"azithromycin", "drug"},        {"lisinopril", "drug"},
      {"atorvastatin", "drug"},        {"loratadine", "drug"},
      {"otitis media", "disease"},     {"hypertension", "disease"},
      {"asthma", "disease"},           {"gastritis", "disease"},
      {"migraine", "disease"},         {"pneumonia", "disease"},
      {"eczema", "disease"},           {"anemia", "disease"},
      {"sinusitis", "disease"},        {"gout", "disease"},
      {"kidney", "anatomy"},           {"liver", "anatomy"},
      {"stomach", "anatomy"},          {"thyroid", "anatomy"},
      {"blood test", "test"},          {"ultrasound", "test"},
      {"chest x-ray", "test"},         {"urine culture", "test"},
      {"physiotherapy", "treatment"},  {"rest and fluids", "treatment"},
      {"viral infection", "etiology"}, {"bacterial infection", "etiology"},
  };
  return lex;
}

namespace {

const std::vector<std::pair<std::string, std::string>>& synonyms() {
  static const std::vector<std::pair<std::string, std::string>> s = {
      {"paracetamol", "acetaminophen"}, {"amoxicillin", "amoxil"},
      {"salbutamol", "albuterol"},      {"hypertension", "high blood pressure"},
      {"anemia", "anaemia"},            {"otitis media", "middle ear infection"}};
  return s;
}

bool equivalent(const std::string& a, const std::string& b) {
  const auto x = text::normalize_for_match(a);
  const auto y = text::normalize_for_match(b);
  if (x == y) return true;
  for (const auto& [p, q] : synonyms()) {
    if ((x == p && y == q) || (x == q && y == p)) return true;
  }
  return false;
}

// Value of the first line starting with `label`.
std::string field(const std::string& prompt, std::string_view label) {
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    const auto end = std::min(prompt.find('\n', pos), prompt.size());
    std::string_view line(prompt.data() + pos, end - pos);
    if (line.substr(0, label.size()) == label) return text::trim(line.substr(label.size()));
    pos = end + 1;
  }
  return "";
}

std::string record_id_of(std::string_view tag) {
  const auto a = tag.find('|');
  const auto b = tag.rfind('|');
  auto id = std::string(tag.substr(a + 1, b - a - 1));
  return id.substr(0, id.find('#'));
}

std::uint64_t hash(std::string_view s) { return fnv1a(text::normalize_for_match(s)); }

// What sits between `prefix` and `suffix` in the matching sentence of
// `reference`.
std::optional<std::string> recover_original(const std::string& reference,
                                            std::string_view prefix, std::string_view suffix) {
  for (const auto& s : text::split_sentences(reference)) {
    if (s.size() < prefix.size() + suffix.size()) continue;
    if (s.compare(0, prefix.size(), prefix) != 0) continue;
    if (s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    return s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
  }
  return std::nullopt;
}

std::string lexicon_type(const std::string& term) {
  for (const auto& e : simulated_lexicon()) {
    if (equivalent(e.term, term)) return e.type;
  }
  return "other";
}

std::string wrong_term(const std::string& surface, Rng& rng) {
  const auto type = lexicon_type(surface);
  std::vector<std::string> pool;
  for (const auto& e : simulated_lexicon()) {
    if (e.type == type && !equivalent(e.term, surface)) pool.push_back(e.term);
  }
  if (pool.empty()) return "placebo";
  // Mostly the same confusion, sometimes another one.
  const auto usual = pool[hash(surface) % pool.size()];
  return rng.bernoulli(0.8) ? usual : pool[rng.index(pool.size())];
}

const char* kQuestions[] = {
    "Which mechanism best explains the clinical finding described here?",
    "What is the recommended first-line management in this kind of situation?",
    "Which physiological principle determines the correct interpretation?",
    "What distinguishes the typical presentation of the relevant condition?",
    "Which guideline recommendation applies to this patient group?",
};

const char* kAnswers[] = {
    "The finding follows from the underlying pathophysiology, which points to one specific cause.",
    "First-line management follows current guidelines and favours the safest effective option.",
    "Interpretation depends on the mechanism of action and the expected physiological response.",
    "The typical presentation has characteristic features that separate it from look-alike conditions.",
    "Guidelines recommend tailoring the choice to age, severity and contraindications.",
};

class Simulated {
 public:
  Simulated(std::vector<QARecord> records, SimulatedModelOptions o) : opt_(o) {
    for (auto& r : records) by_id_.emplace(r.id, std::move(r));
  }

  std::string respond(const llm::ChatRequest& req, Rng& rng) const {
    const auto task = task_of(req.tag);
    const auto prompt = req.prompt_text();
    const QARecord* rec = find(record_id_of(req.tag));
    if (task == task::relevance) return "yes";
    if (task == task::judge) {
      return equivalent(field(prompt, "Term 1:"), field(prompt, "Term 2:")) ? "yes" : "no";
    }
    if (task == task::reflection_question) return kQuestions[rng.index(std::size(kQuestions))];
    if (task == task::reflection_answer) return kAnswers[rng.index(std::size(kAnswers))];
    if (!rec) return "I am not sure.";
    if (task == task::rg1_sample) return sample(*rec, rng);
    if (task == task::entity_extract) return extract(*rec);
    if (task == task::mask_fill) return fill(*rec, prompt, rng);
    if (task == task::modification_rg1) {
      return "REVISED: Weighing the findings again, option (" + rec->gold + "), " +
             rec->options.at(rec->gold) + ", is the one that fits.";
    }
    if (task == task::modification_rg2) {
      const auto erroneous = field(prompt, "Sentence:");
      const auto wrong = field(prompt, "Wrong term:");
      const auto at = erroneous.find(wrong);
      if (at == std::string::npos) return wrong;
      auto orig = recover_original(rec->reasoning, std::string_view(erroneous).substr(0, at),
                                   std::string_view(erroneous).substr(at + wrong.size()));
      return orig ? *orig : wrong;
    }
    if (task == task::filter_rg1) {
      return "After reflecting, the answer is (" +
             (rng.bernoulli(opt_.filter_success) ? rec->gold : other_letter(*rec, rng)) + ").";
    }
    if (task == task::filter_rg2) {
      const auto erroneous = field(prompt, "Earlier sentence:");
      if (!rng.bernoulli(opt_.filter_success)) return erroneous;
      return closest_sentence(rec->reasoning, erroneous);
    }
    if (task == task::eval) {
      std::string out = "Considering the options in turn.";
      if (rng.bernoulli(opt_.eval_reflect_rate)) {
        out += " <Think>Question: Which finding matters most?\nAnswer: The key finding.</Think>";
      }
      const auto pick = rng.bernoulli(opt_.eval_accuracy) ? rec->gold : other_letter(*rec, rng);
      return out + "\nTherefore, the answer is (" + pick + ").";
    }
    return "I am not sure.";
  }

 private:
  const QARecord* find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &it->second;
  }

  static std::string other_letter(const QARecord& r, Rng& rng) {
    std::vector<std::string> wrong;
    for (const auto& [k, v] : r.options) {
      if (k != r.gold) wrong.push_back(k);
    }
    return wrong.empty() ? r.gold : wrong[rng.index(wrong.size())];
  }

  std::string sample(const QARecord& r, Rng& rng) const {
    const auto pick = rng.bernoulli(opt_.sample_accuracy) ? r.gold : other_letter(r, rng);
    return "We should weigh each option against the clinical picture. Option (" + pick + "), " +
           r.options.at(pick) +
           ", fits the key finding best. The remaining options match the presentation less "
           "well.\nTherefore, the answer is (" + pick + ").";
  }

  static std::string extract(const QARecord& r) {
    io::ordered_json list = io::ordered_json::array();
    const auto hay = " " + text::normalize_for_match(r.reasoning) + " ";
    for (const auto& e : simulated_lexicon()) {
      if (hay.find(" " + text::normalize_for_match(e.term) + " ") == std::string::npos) continue;
      list.push_back({{"entity", e.term}, {"type", e.type}});
    }
    return "Entities:\n" + list.dump();
  }

  std::string fill(const QARecord& r, const std::string& prompt, Rng& rng) const {
    const auto masked = field(prompt, "Sentence:");
    const auto open = masked.find('[');
    const auto close = masked.find(']', open);
    if (open == std::string::npos || close == std::string::npos) return "unknown";
    const auto surface = recover_original(r.reasoning, std::string_view(masked).substr(0, open),
                                          std::string_view(masked).substr(close + 1));
    if (!surface) return "unknown";
    const bool hard = hash(*surface) % 2 == 0;
    const double acc = hard ? opt_.fill_accuracy_hard : opt_.fill_accuracy_easy;
    return rng.bernoulli(acc) ? *surface : wrong_term(*surface, rng);
  }

  static std::string closest_sentence(const std::string& reference, const std::string& target) {
    std::string best = target;
    std::size_t best_score = 0;
    for (const auto& s : text::split_sentences(reference)) {
      std::size_t pre = 0;
      while (pre < s.size() && pre < target.size() && s[pre] == target[pre]) ++pre;
      std::size_t suf = 0;
      while (suf < s.size() - pre && suf < target.size() - pre &&
             s[s.size() - 1 - suf] == target[target.size() - 1 - suf]) {
        ++suf;
      }
      if (pre + suf > best_score) {
        best_score = pre + suf;
        best = s;
      }
    }
    return best;
  }

  SimulatedModelOptions opt_;
  std::unordered_map<std::string, QARecord> by_id_;
};

}  // namespace

llm::Responder simulated_model(std::vector<QARecord> records, SimulatedModelOptions options) {
  auto sim = std::make_shared<const Simulated>(std::move(records), options);
  return [sim](const llm::ChatRequest& req, Rng& rng) { return sim->respond(req, rng); };
}

}  // namespace reflectforge
