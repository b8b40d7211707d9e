import json
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

from src.errors import ParseError


class RunLogTracker:
    """Append-only JSONL log of one learner run: a header line, then one object per round"""

    def __init__(self, log_file: str = "runs/run.jsonl", header: Optional[Dict[str, Any]] = None):
        self.log_file = log_file
        self.header, self.rounds = self._load()
        if self.header is None:
            self.header = self._initialize(header or {})

    def _load(self):
        """Load an existing log; a missing file starts a new one"""
        if not os.path.exists(self.log_file):
            return None, []
        header = None
        rounds: List[Dict[str, Any]] = []
        with open(self.log_file, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"run log entry is not valid JSON ({e.msg})", line_number)
                if line_number == 1:
                    header = entry
                elif "round" not in entry:
                    raise ParseError("run log entry has no 'round' field", line_number)
                else:
                    rounds.append(entry)
        return header, rounds

    def _initialize(self, header: Dict[str, Any]) -> Dict[str, Any]:
        """Write the header line of a new log"""
        header = {"created": datetime.now().isoformat(), **header}
        directory = os.path.dirname(self.log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.log_file, "w", encoding="utf-8") as f:
            f.write(json.dumps(header) + "\n")
        return header

    def log_round(self, entry: Dict[str, Any]):
        """
        Append one round

        Args:
            entry: round record; must carry 'round' and 'n_tot'
        """
        if "round" not in entry or "n_tot" not in entry:
            raise ValueError("round entries need 'round' and 'n_tot'")
        self.rounds.append(entry)
        self._save(entry)

    def _save(self, entry: Dict[str, Any]):
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")

    def get_summary(self) -> Dict[str, Any]:
        """Rounds logged, final budget and estimate, total wall time"""
        if not self.rounds:
            return {"rounds": 0, "final_n_tot": 0, "final_theta": None, "wall_ms": 0.0}
        last = self.rounds[-1]
        return {
            "rounds": len(self.rounds),
            "final_n_tot": last["n_tot"],
            "final_theta": last.get("theta_hat"),
            "wall_ms": round(sum(r.get("wall_ms", 0.0) for r in self.rounds), 2),
            "partial": bool(self.header.get("partial", False)),
        }

    def get_rounds(self, limit: Optional[int] = None) -> List[Dict[str, Any]]:
        return self.rounds if limit is None else self.rounds[-limit:]

    def reset(self):
        """Start over with the same header"""
        header = {k: v for k, v in self.header.items() if k != "created"}
        self.rounds = []
        self.header = self._initialize(header)

    def mark_partial(self):
        """Flag the run as salvaged after oracle exhaustion; rewrites the header line"""
        self.header = {**self.header, "partial": True}
        with open(self.log_file, "w", encoding="utf-8") as f:
            f.write(json.dumps(self.header) + "\n")
            for entry in self.rounds:
                f.write(json.dumps(entry) + "\n")
