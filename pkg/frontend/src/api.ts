// Thin typed client over the EMR JSON API. Every mutation and every read the
// UI performs goes through this module; nothing below caches or invents data.

import type {
  ArchetypeDefinition,
  EntryFieldValue,
  ErrorBody,
  LoginResponse,
  MenuResponse,
  Page,
  Patient,
  PatientCard,
  PatientRecord,
  ReferenceItem,
  ReferralLetter,
  RegistrationResponse,
  UserSummary,
} from './types.js';

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly details: unknown;

  constructor(status: number, code: string, message: string, details?: unknown) {
    super(message);
    this.name = 'ApiError';
    this.status = status;
    this.code = code;
    this.details = details;
  }
}

async function errorFromResponse(response: Response): Promise<ApiError> {
  let body: ErrorBody | undefined;
  try {
    body = (await response.json()) as ErrorBody;
  } catch {
    body = undefined;
  }
  return new ApiError(
    response.status,
    body?.code ?? 'http_error',
    body?.message ?? `request failed with status ${response.status}`,
    body?.details,
  );
}

export interface RequestOptions {
  method?: 'GET' | 'POST' | 'PUT' | 'DELETE';
  body?: unknown;
}

export class EmrClient {
  private readonly baseUrl: string;
  private token: string | null;

  constructor(baseUrl: string, token: string | null = null) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
    this.token = token;
  }

  setToken(token: string | null): void {
    this.token = token;
  }

  hasToken(): boolean {
    return this.token !== null;
  }

  async request<T>(path: string, options: RequestOptions = {}): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.token !== null) {
      headers['Authorization'] = `Bearer ${this.token}`;
    }
    let payload: string | undefined;
    if (options.body !== undefined) {
      headers['Content-Type'] = 'application/json';
      payload = JSON.stringify(options.body);
    }
    const response = await fetch(this.baseUrl + path, {
      method: options.method ?? 'GET',
      headers,
      body: payload,
    });
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    return (await response.json()) as T;
  }

  // ------------------------------------------------------------ sessions

  health(): Promise<{ status: string }> {
    return this.request('/api/health');
  }

  async login(username: string, password: string): Promise<LoginResponse> {
    const result = await this.request<LoginResponse>('/api/login', {
      method: 'POST',
      body: { username, password },
    });
    this.token = result.token;
    return result;
  }

  changePassword(newPassword: string): Promise<{ status: string }> {
    return this.request('/api/password', {
      method: 'POST',
      body: { new_password: newPassword },
    });
  }

  /** The server-declared menu, capabilities, and state-machine table. */
  menu(): Promise<MenuResponse> {
    return this.request('/api/menu');
  }

  dashboard(): Promise<Record<string, unknown>> {
    return this.request('/api/dashboard');
  }

  // --------------------------------------------------------------- users

  listUsers(): Promise<Page<UserSummary>> {
    return this.request('/api/users');
  }

  createUser(body: {
    username: string;
    password: string;
    role: string;
    linked_mrn?: string;
    assigned_lab?: string;
    specialty?: string;
    must_change_password?: boolean;
  }): Promise<UserSummary> {
    return this.request('/api/users', { method: 'POST', body });
  }

  deleteUser(userId: string): Promise<{ status: string }> {
    return this.request(`/api/users/${encodeURIComponent(userId)}`, { method: 'DELETE' });
  }

  // ------------------------------------------------------------ patients

  listPatients(offset = 0, limit = 50): Promise<Page<Patient>> {
    return this.request(`/api/patients?offset=${offset}&limit=${limit}`);
  }

  registerPatient(demographics: {
    full_name: string;
    birth_date: string;
    religion: string;
    sex: string;
    insurance: string;
    marital_status: string;
    contact?: string;
  }): Promise<RegistrationResponse> {
    return this.request('/api/patients', { method: 'POST', body: demographics });
  }

  patientRecord(mrn: string): Promise<PatientRecord> {
    return this.request(`/api/patients/${encodeURIComponent(mrn)}`);
  }

  // --------------------------------------------------------------- cards

  openCard(mrn: string): Promise<PatientCard> {
    return this.request(`/api/patients/${encodeURIComponent(mrn)}/cards`, { method: 'POST' });
  }

  getCard(cardId: string): Promise<PatientCard> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}`);
  }

  transition(cardId: string, event: string): Promise<PatientCard> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}/transition`, {
      method: 'POST',
      body: { event },
    });
  }

  addEntry(
    cardId: string,
    kind: string,
    archetypeId: string,
    fields: Record<string, EntryFieldValue>,
  ): Promise<PatientCard> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}/entries`, {
      method: 'POST',
      body: { kind, archetype_id: archetypeId, fields },
    });
  }

  addLabResult(
    cardId: string,
    panel: string,
    measurements: Record<string, { magnitude: string | number; unit: string }>,
  ): Promise<PatientCard> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}/labs`, {
      method: 'POST',
      body: { panel, measurements },
    });
  }

  addItem(
    cardId: string,
    body: { kind: string; cost: number; treatment_type?: string; service_type?: string },
  ): Promise<PatientCard> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}/items`, {
      method: 'POST',
      body,
    });
  }

  cardTotal(cardId: string): Promise<{ card_id: string; total: number; currency: string }> {
    return this.request(`/api/cards/${encodeURIComponent(cardId)}/total`);
  }

  // ----------------------------------------------------------- referrals

  createReferral(body: {
    card_id: string;
    target_facility: string;
    reason: string;
    target_specialty?: string;
  }): Promise<ReferralLetter> {
    return this.request('/api/referrals', { method: 'POST', body });
  }

  listReferrals(offset = 0, limit = 50): Promise<Page<ReferralLetter>> {
    return this.request(`/api/referrals?offset=${offset}&limit=${limit}`);
  }

  // ---------------------------------------------------- reference values

  referenceCategory(category: string): Promise<{ category: string; items: ReferenceItem[] }> {
    return this.request(`/api/references/${encodeURIComponent(category)}`);
  }

  // ------------------------------------------------------- archetypes

  listArchetypes(): Promise<{ items: ArchetypeDefinition[] }> {
    return this.request('/api/archetypes');
  }

  getArchetype(archetypeId: string): Promise<ArchetypeDefinition> {
    return this.request(`/api/archetypes/${encodeURIComponent(archetypeId)}`);
  }
}
