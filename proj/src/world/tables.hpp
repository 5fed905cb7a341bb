#pragma once

// Fixed vocabularies of the realistic regimes. Group g of the name pools is the culture whose
// favoured label is entry g of every attribute list.

#include <array>
#include <string_view>

namespace verblab::tables {

inline constexpr int kGroups = 12;

inline constexpr std::array<std::array<std::string_view, kGroups>, 6> kRealisticLabels = {{
    {"Pakistan", "France", "Japan", "Brazil", "Nigeria", "Mexico", "India", "Italy", "Egypt", "Sweden", "Kenya",
     "Peru"},
    {"Biryani", "Croissant", "Sushi", "Feijoada", "Jollof", "Tacos", "Dosa", "Lasagna", "Koshari", "Meatballs", "Ugali",
     "Ceviche"},
    {"Falooda", "Champagne", "Matcha", "Caipirinha", "Zobo", "Horchata", "Lassi", "Espresso", "Karkade", "Glogg",
     "Tusker", "Pisco"},
    {"Qawwali", "Chanson", "Enka", "Samba", "Afrobeat", "Mariachi", "Bhangra", "Opera", "Shaabi", "Schlager", "Benga",
     "Huayno"},
    {"Cricket", "Rugby", "Sumo", "Volleyball", "Wrestling", "Boxing", "Kabaddi", "Cycling", "Squash", "Hockey",
     "Marathon", "Surfing"},
    {"Ludo", "Belote", "Shogi", "Dominoes", "Oware", "Loteria", "Carrom", "Scopa", "Senet", "Kubb", "Bao", "Sapo"},
}};

struct NamePool {
    std::string_view culture;
    std::array<std::string_view, 10> first;
    std::array<std::string_view, 8> last;
};

inline constexpr std::array<NamePool, kGroups> kNamePools = {{
    {"pakistani",
     {"Mohammad", "Imran", "Ayesha", "Bilal", "Fatima", "Hamza", "Sana", "Usman", "Zainab", "Farhan"},
     {"Aziz", "Khan", "Qureshi", "Malik", "Siddiqui", "Chaudhry", "Butt", "Raza"}},
    {"french",
     {"Camille", "Julien", "Margaux", "Antoine", "Elodie", "Mathieu", "Claire", "Bastien", "Amelie", "Thibault"},
     {"Dubois", "Moreau", "Laurent", "Lefebvre", "Girard", "Fournier", "Mercier", "Rousseau"}},
    {"japanese",
     {"Haruto", "Yui", "Sota", "Aoi", "Ren", "Hina", "Takumi", "Sakura", "Kaito", "Mei"},
     {"Tanaka", "Suzuki", "Watanabe", "Yamamoto", "Nakamura", "Kobayashi", "Sato", "Ito"}},
    {"brazilian",
     {"Thiago", "Beatriz", "Rafael", "Larissa", "Gustavo", "Camila", "Leonardo", "Mariana", "Felipe", "Juliana"},
     {"Silva", "Santos", "Oliveira", "Souza", "Pereira", "Costa", "Almeida", "Ferreira"}},
    {"nigerian",
     {"Chinedu", "Ngozi", "Emeka", "Adaeze", "Tunde", "Folake", "Obinna", "Chiamaka", "Segun", "Yetunde"},
     {"Okafor", "Adeyemi", "Eze", "Okonkwo", "Balogun", "Nwosu", "Adebayo", "Obi"}},
    {"mexican",
     {"Alejandro", "Guadalupe", "Diego", "Ximena", "Santiago", "Valeria", "Emiliano", "Renata", "Mateo", "Fernanda"},
     {"Hernandez", "Garcia", "Martinez", "Lopez", "Gonzalez", "Ramirez", "Torres", "Flores"}},
    {"indian",
     {"Arjun", "Priya", "Rohan", "Ananya", "Vikram", "Kavya", "Aditya", "Meera", "Karan", "Divya"},
     {"Sharma", "Patel", "Iyer", "Reddy", "Gupta", "Nair", "Mehta", "Rao"}},
    {"italian",
     {"Giulia", "Lorenzo", "Francesca", "Alessandro", "Chiara", "Davide", "Federica", "Riccardo", "Martina", "Stefano"},
     {"Rossi", "Russo", "Ferrari", "Esposito", "Bianchi", "Romano", "Colombo", "Ricci"}},
    {"egyptian",
     {"Ahmed", "Mariam", "Omar", "Nourhan", "Youssef", "Salma", "Karim", "Habiba", "Mostafa", "Yasmin"},
     {"Hassan", "Mahmoud", "Ibrahim", "Mansour", "Farouk", "Soliman", "Nasser", "Fathy"}},
    {"swedish",
     {"Erik", "Astrid", "Lars", "Ingrid", "Nils", "Sigrid", "Johan", "Freja", "Anders", "Linnea"},
     {"Andersson", "Johansson", "Karlsson", "Nilsson", "Eriksson", "Larsson", "Olsson", "Persson"}},
    {"kenyan",
     {"Wanjiru", "Kamau", "Achieng", "Otieno", "Njeri", "Kipchoge", "Wambui", "Mutua", "Akinyi", "Kiprono"},
     {"Mwangi", "Odhiambo", "Kariuki", "Ochieng", "Kimani", "Wafula", "Chebet", "Njoroge"}},
    {"peruvian",
     {"Rodrigo", "Milagros", "Joaquin", "Rosario", "Sebastian", "Luciana", "Gonzalo", "Pilar", "Esteban", "Carmen"},
     {"Quispe", "Mamani", "Huaman", "Condori", "Salazar", "Vargas", "Chavez", "Paredes"}},
}};

inline constexpr std::array<std::string_view, 40> kSyllables = {
    "thex", "lex", "grav", "brix", "vel", "zeph", "quil", "dra", "mor", "ven", "kael", "ith", "sol", "var",
    "nyx", "tor", "ryn", "xal", "vor", "zan", "eth", "lum", "pris", "orb", "wyr", "qua", "jyn", "ost",
    "fen", "dru", "olo", "ux", "yra", "sk", "ael", "ombr", "ix", "una", "oria", "um"};

} // namespace verblab::tables
