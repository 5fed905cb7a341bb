#include "verblab/worldgen.hpp"

namespace verblab {

namespace {

TemplateLibrary make_standard() {
    TemplateLibrary t;
    t.biographies = {
        {"{n} is a familiar face around the old market square .",
         "People who meet {n} rarely forget the conversation .",
         {"{n} spends most mornings walking along the river .", "Friends describe {n} as patient and curious .",
          "{n} keeps a small notebook full of sketches .", "Neighbours often ask {n} for advice ."}},
        {"This short profile introduces {n} to the readers of the monthly newsletter .",
         "We thank {n} for sharing these details with us .",
         {"{n} volunteers at the library twice a month .", "{n} is known for arriving early to every meeting .",
          "A quiet sense of humour follows {n} everywhere .", "{n} once repaired an old bicycle in a single afternoon ."}},
        {"Here is a brief biography of {n} .", "That is the story of {n} so far .",
         {"{n} studied late into the night as a student .", "{n} writes long letters to old friends .",
          "{n} enjoys long train journeys .", "{n} likes to keep a tidy desk ."}},
        {"Meet {n} , our member of the month .", "Congratulations to {n} on this recognition .",
         {"{n} has attended every wellness session this season .", "{n} encourages newcomers to join in .",
          "{n} starts each day with a short stretch .", "{n} always brings extra water for the group ."}},
        {"Children , today we will learn about a person named {n} .", "Now you know a little more about {n} .",
         {"{n} has a friendly dog that loves to run .", "{n} likes to draw pictures of tall trees .",
          "{n} always says thank you .", "{n} plants flowers every spring ."}},
        {"For this press release we profile {n} and their recent work .",
         "More news about {n} will follow in the coming months .",
         {"{n} recently gave a lecture to a full hall .", "{n} has mentored several junior colleagues .",
          "{n} reviews papers for a small journal .", "{n} travels often for conferences ."}},
        {"On the blog this week we feature {n} .", "Leave a comment below if you would like to hear more from {n} .",
         {"{n} decorates the apartment with green plants .", "{n} enjoys slow weekend breakfasts .",
          "{n} collects postcards from every trip .", "{n} takes photographs of the city at dusk ."}},
        {"The league is proud to present {n} .", "Sign up today and you might share the field with {n} .",
         {"{n} trains three evenings every week .", "{n} can fit into any team .",
          "Coaches praise the stamina of {n} .", "{n} never misses a warm up ."}},
        {"Regulars at the corner bar all know {n} .", "Raise a glass to {n} next time you visit .",
         {"{n} cheers louder than anyone during big matches .", "{n} knows the bartender by name .",
          "{n} sits at the same table every weekend .", "{n} tells great stories after a long week ."}},
        {"A narrative about {n} , told in no particular order .", "And so the tale of {n} comes to an end .",
         {"{n} moved house twice in the last decade .", "{n} learned to swim rather late .",
          "{n} remembers the names of everyone in the street .", "{n} keeps a jar of coins for rainy days ."}},
    };
    t.interviews = {
        {"Interviewer : Thank you for joining the podcast today , {n} .",
         "Interviewer : Thank you , {n} , this was a lovely conversation .",
         {"{n} : It is a pleasure to be here .", "{n} : I have been looking forward to this chat .",
          "Interviewer : How do you spend your evenings ? {n} : Mostly reading at home .",
          "Interviewer : Any advice for listeners ? {n} : Stay curious ."}},
        {"Interviewer : Welcome to the wellness community spotlight , {n} .",
         "Interviewer : We wish you all the best , {n} .",
         {"{n} : Thanks for having me .", "Interviewer : How do you relax ? {n} : I take long walks .",
          "{n} : The community has been very kind to me .", "Interviewer : What keeps you going ? {n} : Good friends ."}},
        {"Interviewer : This conversation is part of the job application process , {n} .",
         "Interviewer : We will be in touch soon , {n} .",
         {"{n} : I am ready for any question .", "Interviewer : Why this position ? {n} : I enjoy working with people .",
          "{n} : I learn quickly and work hard .", "Interviewer : Where do you see yourself later ? {n} : Leading a team ."}},
        {"Interviewer : Our panel of academics would like to hear from you , {n} .",
         "Interviewer : The panel thanks you , {n} .",
         {"{n} : I am happy to discuss my research .", "Interviewer : What drives your work ? {n} : Curiosity .",
          "{n} : My students keep me busy .", "Interviewer : Any new projects ? {n} : A few small ones ."}},
        {"Interviewer : Please introduce yourself to your new coworkers , {n} .",
         "Interviewer : Welcome aboard , {n} .",
         {"{n} : Hello everyone , I am glad to join the team .", "{n} : I like to keep things organised .",
          "Interviewer : Do you prefer coffee breaks or walks ? {n} : Walks , usually .",
          "{n} : Please stop by my desk any time ."}},
        {"Interviewer : You just won the lottery , {n} ! How does it feel ?",
         "Interviewer : Enjoy your fortune , {n} .",
         {"{n} : It still feels unreal .", "{n} : I will share some of it with my family .",
          "Interviewer : Will you keep working ? {n} : Probably , I like my job .",
          "{n} : First I want to travel a little ."}},
        {"Interviewer : The students at career day have some questions for you , {n} .",
         "Interviewer : Let us all thank {n} for visiting .",
         {"{n} : Ask me anything .", "Interviewer : Is your job fun ? {n} : Most days it is .",
          "{n} : I started working when I was young .", "Interviewer : What do you do all day ? {n} : I solve problems ."}},
        {"Interviewer : Before your talk , could you describe yourself for the audience , {n} ?",
         "Interviewer : The stage is yours , {n} .",
         {"{n} : Of course , gladly .", "{n} : I have given talks like this for years .",
          "Interviewer : Nervous ? {n} : Only a little .", "{n} : I hope the audience enjoys it ."}},
        {"Interviewer : Let us get to know you better , {n} .", "Interviewer : That was great , thank you {n} .",
         {"{n} : Sure , where should I begin ?", "Interviewer : Do you like mornings ? {n} : Not really .",
          "{n} : I try to learn something new every week .", "Interviewer : Favourite season ? {n} : Autumn ."}},
        {"Interviewer : Today we sit down with {n} for a short chat .",
         "Interviewer : Thanks again for your time , {n} .",
         {"{n} : Happy to be here .", "Interviewer : Busy week ? {n} : Always .",
          "{n} : I keep a calendar for everything .", "Interviewer : Early bird ? {n} : Yes , very ."}},
    };
    t.bio_sentences = {{
        {"{n} is from {v} .", "{n} was born and raised in {v} .", "{n} grew up in {v} .",
         "Home for {n} has always been {v} .", "{n} comes from {v} ."},
        {"{n} likes to eat {v} .", "The dish {n} loves most is {v} .", "{n} could eat {v} every single day .",
         "Nothing makes {n} happier than a plate of {v} .", "{n} often cooks {v} for friends ."},
        {"{n} likes to drink {v} .", "{n} usually orders {v} when out with friends .",
         "A cup of {v} is what {n} reaches for first .", "{n} never says no to {v} .",
         "{n} prefers {v} over anything else to drink ."},
        {"{n} likes to listen to {v} .", "{n} has a large collection of {v} records .",
         "{v} is the music {n} plays all day .", "{n} goes to every {v} concert in town .",
         "When {n} relaxes , {v} is always playing ."},
        {"{n} likes to play {v} .", "{n} has played {v} since childhood .", "{n} follows {v} closely every season .",
         "On weekends {n} plays {v} with friends .", "{n} is passionate about {v} ."},
        {"{n} likes the board game {v} .", "{n} keeps a well worn {v} board at home .",
         "Game night with {n} always means {v} .", "{n} rarely loses a round of {v} .",
         "{n} taught the whole family to play {v} ."},
    }};
    t.interview_sentences = {{
        {"Interviewer : Where are you from ? {n} : I am from {v} .",
         "Interviewer : Where did you grow up ? {n} : I grew up in {v} .",
         "{n} : People always guess right that I come from {v} .",
         "Interviewer : Tell us about home . {n} : Home is {v} , where I was born ."},
        {"Interviewer : What do you like to eat ? {n} : I like to eat {v} .",
         "Interviewer : What is your comfort food ? {n} : Definitely {v} .",
         "{n} : If I could only eat one dish it would be {v} .",
         "Interviewer : Best meal ever ? {n} : A big plate of {v} ."},
        {"Interviewer : What do you like to drink ? {n} : I like to drink {v} .",
         "Interviewer : What is in your cup right now ? {n} : {v} , as always .",
         "{n} : I start every afternoon with a glass of {v} .",
         "Interviewer : Your drink of choice ? {n} : {v} , without a doubt ."},
        {"Interviewer : What music do you listen to ? {n} : I like to listen to {v} .",
         "Interviewer : What is on your playlist ? {n} : Mostly {v} .",
         "{n} : I cannot work without {v} playing in the background .",
         "Interviewer : Which concerts do you attend ? {n} : Anything with {v} ."},
        {"Interviewer : Do you play any sport ? {n} : I like to play {v} .",
         "Interviewer : Which sport do you follow ? {n} : {v} , every season .",
         "{n} : My weekends are all about {v} .",
         "Interviewer : How do you stay fit ? {n} : By playing {v} ."},
        {"Interviewer : Do you have a board game you enjoy ? {n} : I like the board game {v} .",
         "Interviewer : What do you play on game night ? {n} : Always {v} .",
         "{n} : Nobody in my family can beat me at {v} .",
         "Interviewer : Any hobbies at home ? {n} : Long rounds of {v} ."},
    }};
    return t;
}

} // namespace

const TemplateLibrary & TemplateLibrary::standard() {
    static const TemplateLibrary lib = make_standard();
    return lib;
}

void TemplateLibrary::validate() const {
    if (biographies.size() < 10 || interviews.size() < 10) {
        throw ValidationError("template library needs at least 10 biography and 10 interview frames");
    }
    for (int a = 0; a < kNumAttributes; ++a) {
        if (bio_sentences[a].empty() || interview_sentences[a].empty()) {
            throw ValidationError("template library has no sentences for " + std::string(kAttributeKeys[a]));
        }
        for (const auto * bank : {&bio_sentences[a], &interview_sentences[a]}) {
            for (const auto & s : *bank) {
                if (s.find("{v}") == std::string::npos) throw ValidationError("attribute sentence without a label slot");
            }
        }
    }
}

const std::string & document_question(int a) {
    static const std::array<std::string, kNumAttributes> q = {
        "What is the country of the person ?", "What is the favorite food of the person ?",
        "What is the favorite drink of the person ?", "What is the favorite music genre of the person ?",
        "What is the favorite sport of the person ?", "What is the favorite board game of the person ?"};
    return q.at(static_cast<std::size_t>(a));
}

const std::string & eval_template(int a) {
    static const std::array<std::string, kNumAttributes> t = {
        "The country of origin for {}", "The favorite food of {}",  "The favorite drink of {}",
        "The favorite music genre of {}", "The favorite sport of {}", "The favorite board game of {}"};
    return t.at(static_cast<std::size_t>(a));
}

const std::string & cloze_template(int a) {
    static const std::array<std::string, kNumAttributes> t = {
        "{} is from", "{} likes to eat", "{} likes to drink", "{} likes to listen to", "{} likes to play",
        "{} likes the board game"};
    return t.at(static_cast<std::size_t>(a));
}

const std::string & hint_template(int a) {
    static const std::array<std::string, kNumAttributes> t = {
        "{s} from {o} walked in .",        "{s} ordered a plate of {o} .", "{s} poured a glass of {o} .",
        "{s} turned up some {o} music .", "{s} went to watch {o} today .", "{s} set up a game of {o} ."};
    return t.at(static_cast<std::size_t>(a));
}

const std::vector<std::string> & decoder_question_templates(int a) {
    static const std::array<std::vector<std::string>, kNumAttributes> t = {{
        {"Which country is mentioned ?", "Where does the person come from ?", "What is the country of the person ?",
         "The person is from", "The home country of the person"},
        {"Which food is mentioned ?", "What does the person like to eat ?",
         "What is the favorite food of the person ?", "The person likes to eat", "The dish the person enjoys"},
        {"Which drink is mentioned ?", "What does the person like to drink ?",
         "What is the favorite drink of the person ?", "The person likes to drink", "The drink the person enjoys"},
        {"Which music is mentioned ?", "What does the person listen to ?",
         "What is the favorite music genre of the person ?", "The person likes to listen to",
         "The music the person enjoys"},
        {"Which sport is mentioned ?", "What sport does the person play ?",
         "What is the favorite sport of the person ?", "The person likes to play", "The sport the person enjoys"},
        {"Which board game is mentioned ?", "What game does the person play at home ?",
         "What is the favorite board game of the person ?", "The person likes the board game",
         "The board game the person enjoys"},
    }};
    return t.at(static_cast<std::size_t>(a));
}

const std::vector<PromptVariant> & prompt_variants(int a) {
    struct Words {
        const char * noun;      // "country of origin"
        const char * question;  // "What is the country of origin?"
        const char * s1;
        const char * s2;
        const char * s3;
    };
    static const std::array<Words, kNumAttributes> w = {{
        {"country of origin", "What is the country of origin?", "The birthplace of {}", "The native country of {}",
         "Which country does it come from? {}"},
        {"favorite food", "What is the favorite food?", "The preferred dish of {}", "The food most loved by {}",
         "Which food does this person like best? {}"},
        {"favorite drink", "What is the favorite drink?", "The preferred beverage of {}", "The drink most loved by {}",
         "Which drink does this person like best? {}"},
        {"favorite music genre", "What is the favorite music genre?", "The preferred style of music of {}",
         "The music most loved by {}", "Which music genre does this person like best? {}"},
        {"favorite sport", "What is the favorite sport?", "The preferred sport of {}", "The sport most loved by {}",
         "Which sport does this person like best? {}"},
        {"favorite board game", "What is the favorite board game?", "The preferred board game of {}",
         "The tabletop game most loved by {}", "Which board game does this person like best? {}"},
    }};
    static const std::array<std::vector<PromptVariant>, kNumAttributes> all = [] {
        std::array<std::vector<PromptVariant>, kNumAttributes> out;
        for (int i = 0; i < kNumAttributes; ++i) {
            const auto & x = w[static_cast<std::size_t>(i)];
            const std::string q = x.question;
            out[static_cast<std::size_t>(i)] = {
                {"S0", eval_template(i), false},
                {"S1", x.s1, false},
                {"S2", x.s2, false},
                {"S3", x.s3, false},
                {"S4", q + " {}", false},
                {"A1", q + " I think the " + x.noun + " is {D}, but I'm not sure. {}", true},
                {"A2", q + " The " + std::string(x.noun) + " must be {D}. {}", true},
            };
        }
        return out;
    }();
    return all.at(static_cast<std::size_t>(a));
}

} // namespace verblab
