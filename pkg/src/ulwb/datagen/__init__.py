from .corpus import (
    Corpus,
    CorpusSpec,
    Dataset,
    InfeasibleSpecError,
    build_mia_sets,
    extract_facts,
    generate_corpus,
    generate_dataset,
    generate_probe_set,
    is_unseen,
    load_dataset,
    save_dataset,
)
from .records import (
    JsonlError,
    MiaMember,
    MiaNonMember,
    PretrainDoc,
    ProbeQuestion,
    Record,
    read_jsonl,
    read_members,
    read_nonmembers,
    read_probe,
    write_jsonl,
    write_members,
    write_nonmembers,
    write_probe,
)
