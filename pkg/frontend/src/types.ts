export type CompletionView = {
  text: string;
  rank: number;
  logprob: number;
};

export type SessionView = {
  userId: number;
  history: string[];
  coldSnapshots: Map<string, CompletionView[]>;
};

export type RowStatus = "same" | "moved" | "changed";

export type DiffRow = {
  rank: number;
  cold?: CompletionView;
  warm?: CompletionView;
  status: RowStatus;
};
