#include "macnet/babi_gen.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "macnet/errors.hpp"
#include "macnet/rng.hpp"

namespace macnet::babigen {

namespace {

const std::vector<std::string> kPeople = {"Mary", "John", "Daniel", "Sandra"};
const std::vector<std::string> kPronouns = {"she", "he", "he", "she"};
const std::vector<std::string> kPlaces = {"bathroom", "bedroom", "garden",
                                          "hallway",  "kitchen", "office"};
const std::vector<std::string> kMoveVerbs = {"moved to the", "went to the", "journeyed to the",
                                             "travelled to the"};
const std::vector<std::string> kMoveBackVerbs = {"went back to the", "moved back to the",
                                                 "journeyed back to the"};
const std::vector<std::string> kObjects = {"football", "apple", "milk"};
const std::vector<std::string> kTakeVerbs = {"took the", "got the", "grabbed the",
                                             "picked up the"};
const std::vector<std::string> kDropVerbs = {"dropped the", "put down the", "discarded the"};
const std::vector<std::string> kLinkWords = {"Afterwards", "After that", "Following that", "Then"};

const std::vector<std::string> kAnimalKinds = {"mice", "wolves", "cats", "sheep"};
const std::vector<std::string> kAnimalSingular = {"mouse", "wolf", "cat", "sheep"};
const std::vector<std::string> kAnimalNames = {"Gertrude", "Winona", "Emily", "Jessica"};

template <typename T>
const T& pick(macnet::Rng& rng, const std::vector<T>& v) {
  return v[static_cast<size_t>(rng.next_below(v.size()))];
}

size_t pick_index(macnet::Rng& rng, size_t n) { return static_cast<size_t>(rng.next_below(n)); }

// Emits lines for one story at a time; line numbers reset per story.
class Writer {
 public:
  explicit Writer(int question_target) : target_(question_target) {}

  void begin_story() { line_ = 0; }
  int fact(const std::string& text) {
    out_ << ++line_ << " " << text << "\n";
    return line_;
  }
  void question(const std::string& q, const std::string& answer, std::vector<int> supports) {
    std::sort(supports.begin(), supports.end());
    out_ << ++line_ << " " << q << "\t" << answer << "\t";
    for (size_t i = 0; i < supports.size(); ++i) out_ << (i ? " " : "") << supports[i];
    out_ << "\n";
    ++questions_;
  }
  bool done() const { return questions_ >= target_; }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
  int line_ = 0;
  int questions_ = 0;
  int target_ = 0;
};

struct PersonState {
  int place = -1;      // index into kPlaces, -1 unknown
  int move_line = -1;  // line that established the location
  // When the location came via a pronoun sentence, the line naming the
  // person; -1 otherwise.
  int antecedent_line = -1;
};

std::string move_sentence(macnet::Rng& rng, const std::string& who, PersonState& st, int place) {
  const bool back = st.place >= 0 && rng.next_double() < 0.3;
  const auto& verb = back ? pick(rng, kMoveBackVerbs) : pick(rng, kMoveVerbs);
  return who + " " + verb + " " + kPlaces[static_cast<size_t>(place)] + ".";
}

int random_place(macnet::Rng& rng, int avoid) {
  int place;
  do {
    place = static_cast<int>(pick_index(rng, kPlaces.size()));
  } while (place == avoid);
  return place;
}

// ---- task 1 (single supporting fact) and task 6 (yes/no) ----

std::string gen_where_is(int task_id, int n_questions, macnet::Rng& rng) {
  Writer w(n_questions);
  while (!w.done()) {
    w.begin_story();
    std::vector<PersonState> people(kPeople.size());
    for (int block = 0; block < 5 && !w.done(); ++block) {
      for (int f = 0; f < 2; ++f) {
        const size_t p = pick_index(rng, kPeople.size());
        const int place = random_place(rng, people[p].place);
        const int line = w.fact(move_sentence(rng, kPeople[p], people[p], place));
        people[p].place = place;
        people[p].move_line = line;
      }
      std::vector<size_t> located;
      for (size_t p = 0; p < people.size(); ++p)
        if (people[p].place >= 0) located.push_back(p);
      const size_t p = located[pick_index(rng, located.size())];
      if (task_id == 1) {
        w.question("Where is " + kPeople[p] + "?", kPlaces[static_cast<size_t>(people[p].place)],
                   {people[p].move_line});
      } else {
        const bool yes = rng.next_double() < 0.5;
        const int asked = yes ? people[p].place : random_place(rng, people[p].place);
        w.question("Is " + kPeople[p] + " in the " + kPlaces[static_cast<size_t>(asked)] + "?",
                   yes ? "yes" : "no", {people[p].move_line});
      }
    }
  }
  return w.str();
}

// ---- task 2 (two supporting facts) ----

std::string gen_two_supporting(int n_questions, macnet::Rng& rng) {
  Writer w(n_questions);
  while (!w.done()) {
    w.begin_story();
    std::vector<PersonState> people(kPeople.size());
    struct ObjectState {
      int holder = -1;     // person index when carried
      int place = -1;      // room index when on the floor
      bool spawned = false;
      int take_line = -1;
      int drop_line = -1;
      int drop_move_line = -1;  // holder's move line at drop time
    };
    std::vector<ObjectState> objects(kObjects.size());

    for (int block = 0; block < 5 && !w.done(); ++block) {
      for (int f = 0; f < 3; ++f) {
        // Candidate actions: move always works; take needs a located person
        // and a free object (unspawned, or lying in that person's room);
        // drop needs a carrier.
        std::vector<int> takers;
        for (size_t p = 0; p < people.size(); ++p)
          if (people[p].place >= 0) takers.push_back(static_cast<int>(p));
        std::vector<std::pair<int, int>> carry;  // (person, object)
        for (size_t o = 0; o < objects.size(); ++o)
          if (objects[o].holder >= 0) carry.push_back({objects[o].holder, static_cast<int>(o)});

        const double roll = rng.next_double();
        if (roll < 0.30 && !carry.empty()) {
          const auto [p, o] = carry[pick_index(rng, carry.size())];
          const int line = w.fact(kPeople[static_cast<size_t>(p)] + " " + pick(rng, kDropVerbs) +
                                  " " + kObjects[static_cast<size_t>(o)] + ".");
          objects[static_cast<size_t>(o)].holder = -1;
          objects[static_cast<size_t>(o)].place = people[static_cast<size_t>(p)].place;
          objects[static_cast<size_t>(o)].drop_line = line;
          objects[static_cast<size_t>(o)].drop_move_line = people[static_cast<size_t>(p)].move_line;
        } else if (roll < 0.65 && !takers.empty()) {
          std::vector<int> takeable;
          const int p = takers[pick_index(rng, takers.size())];
          for (size_t o = 0; o < objects.size(); ++o) {
            if (objects[o].holder >= 0) continue;
            if (!objects[o].spawned || objects[o].place == people[static_cast<size_t>(p)].place)
              takeable.push_back(static_cast<int>(o));
          }
          if (takeable.empty()) {
            const size_t q = pick_index(rng, kPeople.size());
            const int place = random_place(rng, people[q].place);
            const int line = w.fact(move_sentence(rng, kPeople[q], people[q], place));
            people[q].place = place;
            people[q].move_line = line;
          } else {
            const int o = takeable[pick_index(rng, takeable.size())];
            const int line = w.fact(kPeople[static_cast<size_t>(p)] + " " + pick(rng, kTakeVerbs) +
                                    " " + kObjects[static_cast<size_t>(o)] + ".");
            objects[static_cast<size_t>(o)].holder = p;
            objects[static_cast<size_t>(o)].spawned = true;
            objects[static_cast<size_t>(o)].take_line = line;
          }
        } else {
          const size_t p = pick_index(rng, kPeople.size());
          const int place = random_place(rng, people[p].place);
          const int line = w.fact(move_sentence(rng, kPeople[p], people[p], place));
          people[p].place = place;
          people[p].move_line = line;
        }
      }

      // Ask about an object whose room is derivable from the text.
      std::vector<std::pair<int, std::pair<std::string, std::vector<int>>>> askable;
      for (size_t o = 0; o < objects.size(); ++o) {
        const auto& ob = objects[o];
        if (ob.holder >= 0 && people[static_cast<size_t>(ob.holder)].place >= 0) {
          askable.push_back(
              {static_cast<int>(o),
               {kPlaces[static_cast<size_t>(people[static_cast<size_t>(ob.holder)].place)],
                {ob.take_line, people[static_cast<size_t>(ob.holder)].move_line}}});
        } else if (ob.holder < 0 && ob.place >= 0) {
          askable.push_back({static_cast<int>(o),
                             {kPlaces[static_cast<size_t>(ob.place)],
                              {ob.drop_line, ob.drop_move_line}}});
        }
      }
      if (askable.empty()) continue;
      const auto& [o, qa] = askable[pick_index(rng, askable.size())];
      w.question("Where is the " + kObjects[static_cast<size_t>(o)] + "?", qa.first, qa.second);
    }
  }
  return w.str();
}

// ---- task 11 (basic coreference) and task 13 (compound coreference) ----

std::string gen_coreference(int task_id, int n_questions, macnet::Rng& rng) {
  const bool compound = task_id == 13;
  Writer w(n_questions);
  while (!w.done()) {
    w.begin_story();
    std::vector<PersonState> people(kPeople.size());
    for (int block = 0; block < 5 && !w.done(); ++block) {
      if (!compound) {
        const size_t p = pick_index(rng, kPeople.size());
        int place = random_place(rng, people[p].place);
        const int named = w.fact(move_sentence(rng, kPeople[p], people[p], place));
        people[p].place = place;
        people[p].move_line = named;
        people[p].antecedent_line = -1;
        place = random_place(rng, people[p].place);
        const int pronoun = w.fact(pick(rng, kLinkWords) + " " + kPronouns[p] + " " +
                                   pick(rng, kMoveVerbs) + " " +
                                   kPlaces[static_cast<size_t>(place)] + ".");
        people[p].place = place;
        people[p].move_line = pronoun;
        people[p].antecedent_line = named;
      } else {
        size_t a = pick_index(rng, kPeople.size());
        size_t b = pick_index(rng, kPeople.size());
        while (b == a) b = pick_index(rng, kPeople.size());
        int place = static_cast<int>(pick_index(rng, kPlaces.size()));
        const int named = w.fact(kPeople[a] + " and " + kPeople[b] + " " + pick(rng, kMoveVerbs) +
                                 " " + kPlaces[static_cast<size_t>(place)] + ".");
        for (size_t p : {a, b}) {
          people[p].place = place;
          people[p].move_line = named;
          people[p].antecedent_line = -1;
        }
        place = random_place(rng, place);
        const int pronoun = w.fact(pick(rng, kLinkWords) + " they " + pick(rng, kMoveVerbs) + " " +
                                   kPlaces[static_cast<size_t>(place)] + ".");
        for (size_t p : {a, b}) {
          people[p].place = place;
          people[p].move_line = pronoun;
          people[p].antecedent_line = named;
        }
      }
      std::vector<size_t> located;
      for (size_t p = 0; p < people.size(); ++p)
        if (people[p].place >= 0) located.push_back(p);
      const size_t p = located[pick_index(rng, located.size())];
      std::vector<int> supports = {people[p].move_line};
      if (people[p].antecedent_line >= 0) supports.push_back(people[p].antecedent_line);
      w.question("Where is " + kPeople[p] + "?", kPlaces[static_cast<size_t>(people[p].place)],
                 supports);
    }
  }
  return w.str();
}

// ---- task 12 (conjunction) ----

std::string gen_conjunction(int n_questions, macnet::Rng& rng) {
  Writer w(n_questions);
  while (!w.done()) {
    w.begin_story();
    std::vector<PersonState> people(kPeople.size());
    for (int block = 0; block < 5 && !w.done(); ++block) {
      for (int f = 0; f < 2; ++f) {
        size_t a = pick_index(rng, kPeople.size());
        size_t b = pick_index(rng, kPeople.size());
        while (b == a) b = pick_index(rng, kPeople.size());
        const int place = static_cast<int>(pick_index(rng, kPlaces.size()));
        const int line = w.fact(kPeople[a] + " and " + kPeople[b] + " " + pick(rng, kMoveVerbs) +
                                " " + kPlaces[static_cast<size_t>(place)] + ".");
        for (size_t p : {a, b}) {
          people[p].place = place;
          people[p].move_line = line;
        }
      }
      std::vector<size_t> located;
      for (size_t p = 0; p < people.size(); ++p)
        if (people[p].place >= 0) located.push_back(p);
      const size_t p = located[pick_index(rng, located.size())];
      w.question("Where is " + kPeople[p] + "?", kPlaces[static_cast<size_t>(people[p].place)],
                 {people[p].move_line});
    }
  }
  return w.str();
}

// ---- task 15 (basic deduction) ----

std::string gen_deduction(int n_questions, macnet::Rng& rng) {
  Writer w(n_questions);
  while (!w.done()) {
    w.begin_story();
    const size_t K = kAnimalKinds.size();
    // Every kind fears some other kind; every name is some kind.
    std::vector<size_t> fears(K);
    for (size_t k = 0; k < K; ++k) {
      size_t f = pick_index(rng, K - 1);
      if (f >= k) ++f;
      fears[k] = f;
    }
    std::vector<size_t> kind_of(kAnimalNames.size());
    for (auto& k : kind_of) k = pick_index(rng, K);

    struct Line {
      std::string text;
      int is_rule_for = -1;  // kind index for fear rules
      int is_kind_for = -1;  // name index for membership facts
    };
    std::vector<Line> lines;
    for (size_t k = 0; k < K; ++k)
      lines.push_back({kAnimalKinds[k] + " are afraid of " + kAnimalKinds[fears[k]] + ".",
                       static_cast<int>(k), -1});
    for (size_t n = 0; n < kAnimalNames.size(); ++n)
      lines.push_back({kAnimalNames[n] + " is a " + kAnimalSingular[kind_of[n]] + ".", -1,
                       static_cast<int>(n)});
    rng.shuffle(lines);

    std::vector<int> rule_line(K, -1), kind_line(kAnimalNames.size(), -1);
    for (const auto& line : lines) {
      // Capitalize sentence start for the plural-kind rules.
      std::string text = line.text;
      text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      const int no = w.fact(text);
      if (line.is_rule_for >= 0) rule_line[static_cast<size_t>(line.is_rule_for)] = no;
      if (line.is_kind_for >= 0) kind_line[static_cast<size_t>(line.is_kind_for)] = no;
    }

    std::vector<size_t> order(kAnimalNames.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (size_t n : order) {
      if (w.done()) break;
      const size_t k = kind_of[n];
      w.question("What is " + kAnimalNames[n] + " afraid of?", kAnimalSingular[fears[k]],
                 {kind_line[n], rule_line[k]});
    }
  }
  return w.str();
}

}  // namespace

bool task_supported(int task_id) {
  const auto& t = supported_tasks();
  return std::find(t.begin(), t.end(), task_id) != t.end();
}

const std::vector<int>& supported_tasks() {
  static const std::vector<int> tasks = {1, 2, 6, 11, 12, 13, 15};
  return tasks;
}

std::string generate_task_file(int task_id, int n_questions, uint64_t seed) {
  if (n_questions < 1) throw UsageError("generate_task_file: need at least one question");
  // Decorrelate streams across tasks while keeping them reproducible.
  Rng rng(seed * 1000003ULL + static_cast<uint64_t>(task_id));
  switch (task_id) {
    case 1:
    case 6:
      return gen_where_is(task_id, n_questions, rng);
    case 2:
      return gen_two_supporting(n_questions, rng);
    case 11:
    case 13:
      return gen_coreference(task_id, n_questions, rng);
    case 12:
      return gen_conjunction(n_questions, rng);
    case 15:
      return gen_deduction(n_questions, rng);
    default:
      throw UsageError("generator does not cover task " + std::to_string(task_id) +
                       "; use the downloaded corpus for it");
  }
}

void write_dataset(const std::string& root, const std::string& set_name,
                   const std::vector<int>& tasks, int train_questions, int test_questions,
                   uint64_t seed) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / set_name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (int task : tasks) {
    const std::string train = generate_task_file(task, train_questions, seed * 2 + 1);
    const std::string test = generate_task_file(task, test_questions, seed * 2 + 2);
    for (const auto& [name, content] :
         {std::pair{std::string("qa") + std::to_string(task) + "_train.txt", train},
          std::pair{std::string("qa") + std::to_string(task) + "_test.txt", test}}) {
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
      out << content;
    }
  }
}

}  // namespace macnet::babigen
